"""Per-joint least-squares map from ED to SE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..joints import NUM_JOINTS
from ..metrics import EdVector, SeVector


@dataclass(frozen=True, eq=False)
class LinearJointModel:
    """SE_k ~ m_k * ED_k + c_k. Joints without a usable fit keep m=1, c=0."""

    m: np.ndarray
    c: np.ndarray
    n: np.ndarray
    resid_var: np.ndarray
    fitted: np.ndarray

    @classmethod
    def identity(cls) -> "LinearJointModel":
        return cls(
            np.ones(NUM_JOINTS), np.zeros(NUM_JOINTS), np.zeros(NUM_JOINTS, dtype=np.int64),
            np.full(NUM_JOINTS, np.nan), np.zeros(NUM_JOINTS, dtype=bool),
        )

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "joints": [
                {
                    "m": float(self.m[k]),
                    "c": float(self.c[k]),
                    "n": int(self.n[k]),
                    "resid_var": None if np.isnan(self.resid_var[k]) else float(self.resid_var[k]),
                    "fitted": bool(self.fitted[k]),
                }
                for k in range(NUM_JOINTS)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearJointModel":
        if d.get("kind") != "linear":
            raise ValueError(f"not a linear model document (kind={d.get('kind')!r})")
        rows = d["joints"]
        if len(rows) != NUM_JOINTS:
            raise ValueError(f"linear model must have {NUM_JOINTS} joints")
        return cls(
            np.array([r["m"] for r in rows], dtype=np.float64),
            np.array([r["c"] for r in rows], dtype=np.float64),
            np.array([r["n"] for r in rows], dtype=np.int64),
            np.array([np.nan if r["resid_var"] is None else r["resid_var"] for r in rows], dtype=np.float64),
            np.array([r["fitted"] for r in rows], dtype=bool),
        )


def fit_linear(ed, se, mask=None) -> LinearJointModel:
    """Ordinary least squares of SE on ED, independently per joint.

    ``ed`` and ``se`` are (n, 14) arrays (or sequences of Ed/SeVector);
    only pairs valid in ``mask`` enter each joint's fit.
    """
    if len(ed) and isinstance(ed[0], EdVector):
        mask = np.stack([e.mask for e in ed]) & np.stack([s.mask for s in se])
        ed = np.stack([e.values for e in ed])
        se = np.stack([s.values for s in se])
    ed = np.asarray(ed, dtype=np.float64).reshape(-1, NUM_JOINTS)
    se = np.asarray(se, dtype=np.float64).reshape(-1, NUM_JOINTS)
    if ed.shape != se.shape:
        raise ValueError(f"ED {ed.shape} and SE {se.shape} are not aligned")
    mask = np.ones(ed.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(ed.shape)

    model = LinearJointModel.identity()
    m, c, n, rv, fitted = model.m.copy(), model.c.copy(), model.n.copy(), model.resid_var.copy(), model.fitted.copy()
    for k in range(NUM_JOINTS):
        x = ed[mask[:, k], k]
        y = se[mask[:, k], k]
        n[k] = x.size
        if x.size < 2 or x.min() == x.max():
            continue
        xm, ym = x.mean(), y.mean()
        dx = x - xm
        m[k] = (dx @ (y - ym)) / (dx @ dx)
        c[k] = ym - m[k] * xm
        resid = y - (m[k] * x + c[k])
        rv[k] = (resid @ resid) / (x.size - 2) if x.size > 2 else 0.0
        fitted[k] = True
    return LinearJointModel(m, c, n, rv, fitted)


def predict_linear(model: LinearJointModel, ed: EdVector, fill: Optional[np.ndarray] = None) -> SeVector:
    """Predicted SE, clamped at zero; masked joints stay masked unless ``fill`` imputes their ED."""
    if fill is None:
        values, mask = ed.values, ed.mask
    else:
        values, mask = np.where(ed.mask, ed.values, fill), np.ones(NUM_JOINTS, dtype=bool)
    pred = np.maximum(model.m * values + model.c, 0.0)
    return SeVector(pred, mask)
