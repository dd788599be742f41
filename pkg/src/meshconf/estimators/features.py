"""Imputation and standardization of ED vectors for the learned techniques.

Undetected joints are filled with that joint's training 95th-percentile ED:
a joint the detector misses is usually occluded, and occlusion goes with
large disagreement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..joints import NUM_JOINTS

FILL_PERCENTILE = 95.0


@dataclass(frozen=True, eq=False)
class FeatureStats:
    fill: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, ed, mask) -> "FeatureStats":
        ed = np.asarray(ed, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if ed.ndim != 2 or ed.shape[1] != NUM_JOINTS or ed.shape[0] == 0:
            raise ValueError("need a non-empty (n, 14) ED matrix")
        fill = np.zeros(NUM_JOINTS)
        for k in range(NUM_JOINTS):
            col = ed[mask[:, k], k]
            fill[k] = np.percentile(col, FILL_PERCENTILE) if col.size else 0.0
        filled = np.where(mask, ed, fill)
        mean = filled.mean(axis=0)
        std = filled.std(axis=0)
        std[std == 0] = 1.0
        return cls(fill, mean, std)

    def impute(self, ed, mask) -> np.ndarray:
        return np.where(np.asarray(mask, dtype=bool), ed, self.fill)

    def transform(self, ed, mask) -> np.ndarray:
        return (self.impute(ed, mask) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"fill": self.fill.tolist(), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("fill", "mean", "std")))
