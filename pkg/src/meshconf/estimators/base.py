from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..joints import NUM_JOINTS, Joint

TECHNIQUES = ("raw", "linear", "mlp")


@dataclass(frozen=True)
class MeshVerdict:
    label: str  # "good" | "bad"
    score: float
    technique: str

    @property
    def bad(self) -> bool:
        return self.label == "bad"


@dataclass(frozen=True, eq=False)
class JointRanking:
    """Joints ordered most-suspect first; ties go to the lower joint index."""

    order: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_scores(cls, scores) -> "JointRanking":
        scores = np.array(scores, dtype=np.float64)
        if scores.shape != (NUM_JOINTS,) or np.isnan(scores).any():
            raise ValueError("ranking needs 14 non-NaN scores")
        order = np.lexsort((np.arange(NUM_JOINTS), -scores))
        scores.setflags(write=False)
        order.setflags(write=False)
        return cls(order, scores)

    @property
    def worst(self) -> Joint:
        return Joint(int(self.order[0]))

    def top(self, k: int):
        return [Joint(int(j)) for j in self.order[:k]]


def label_arrays(se, threshold: float):
    """Ground-truth labels from an (n, 14) SE matrix.

    A mesh is bad when any joint's SE reaches the threshold (inclusive); the
    worst joint is the SE argmax with ties going to the lower index.
    """
    se = np.asarray(se, dtype=np.float64)
    return (se >= threshold).any(axis=1), np.argmax(se, axis=1)
