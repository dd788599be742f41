from __future__ import annotations

from typing import Optional

import numpy as np

from ..metrics import JointErrors
from .base import JointRanking, MeshVerdict


def raw_mesh_rule(ed: JointErrors, threshold: float, technique: str = "raw") -> MeshVerdict:
    """Good iff the largest valid entry is at most ``threshold``."""
    if not ed.mask.any():
        raise ValueError("no valid joints to judge the mesh")
    worst = float(ed.values[ed.mask].max())
    return MeshVerdict("good" if worst <= threshold else "bad", worst, technique)


def raw_worst_joint(ed: JointErrors, fill: Optional[np.ndarray] = None) -> JointRanking:
    """Rank joints by ED, largest first.

    Undetected joints take the value from ``fill`` (per-joint imputation from
    training data) or, without one, are ranked after every valid joint.
    """
    if not ed.mask.any():
        raise ValueError("no valid joints to rank")
    if fill is None:
        scores = np.where(ed.mask, ed.values, -np.inf)
    else:
        scores = np.where(ed.mask, ed.values, fill)
    return JointRanking.from_scores(scores)
