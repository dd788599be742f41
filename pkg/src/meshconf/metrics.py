"""ED / SE features, MPJPE and per-joint Pearson correlation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .geometry import project_weak_perspective
from .joints import JOINT_NAMES, NUM_JOINTS
from .poses import Dataset, PoseSample

CANONICAL_FRAME = 224


@dataclass(frozen=True, eq=False)
class JointErrors:
    """Per-joint distances with a validity mask; masked entries hold NaN."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (NUM_JOINTS,) or mask.shape != (NUM_JOINTS,):
            raise ValueError("expected 14 values and 14 mask flags")
        values[~mask] = np.nan
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, values) -> "JointErrors":
        return cls(values, np.ones(NUM_JOINTS, dtype=bool))

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


class EdVector(JointErrors):
    """Mesh-vs-detector disagreement per joint; mask is the detector's detection flag."""


class SeVector(JointErrors):
    """Mesh-vs-ground-truth 2D error per joint."""


def spin_keypoints_2d(sample: PoseSample) -> np.ndarray:
    if sample.spin_2d is not None:
        return sample.spin_2d
    if sample.spin_3d is None or sample.camera is None:
        raise ValueError(f"{sample.image_id}: no spin_2d and no spin_3d+camera to project")
    return project_weak_perspective(sample.spin_3d, sample.camera, sample.image_size)


def _frame_scale(sample: PoseSample, normalize: bool) -> float:
    return CANONICAL_FRAME / max(sample.image_size) if normalize else 1.0


def compute_ed(sample: PoseSample, normalize: bool = False) -> EdVector:
    """Distance between the projected mesh joints and the detector joints."""
    spin = spin_keypoints_2d(sample)
    det = sample.op_2d.detected
    values = np.zeros(NUM_JOINTS)
    values[det] = np.linalg.norm(spin[det] - sample.op_2d.xy[det], axis=1)
    return EdVector(values * _frame_scale(sample, normalize), det)


def compute_se(sample: PoseSample, normalize: bool = False) -> SeVector:
    spin = spin_keypoints_2d(sample)
    if sample.gt_2d is None:
        raise ValueError(f"{sample.image_id}: missing ground truth")
    values = np.linalg.norm(spin - sample.gt_2d, axis=1)
    return SeVector.full(values * _frame_scale(sample, normalize))


def feature_matrix(dataset: Dataset, normalize: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack ED values, ED mask and SE values for a dataset into (n, 14) arrays."""
    n = len(dataset)
    ed = np.full((n, NUM_JOINTS), np.nan)
    mask = np.zeros((n, NUM_JOINTS), dtype=bool)
    se = np.zeros((n, NUM_JOINTS))
    for i, s in enumerate(dataset):
        e = compute_ed(s, normalize)
        ed[i], mask[i] = e.values, e.mask
        se[i] = compute_se(s, normalize).values
    return ed, mask, se


def mpjpe(pred, gt, mask=None) -> float:
    """Mean Euclidean distance over valid joints; works for 2D or 3D points."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = np.ones(pred.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mpjpe: no valid joints")
    return float(np.linalg.norm(pred[mask] - gt[mask], axis=1).mean())


# ---------------------------------------------------------------------------
# correlation


class CorrelationAccumulator:
    """Mergeable per-joint co-moment sums (Chan et al. pairwise update).

    Feeding batches in any order gives the same statistics up to rounding,
    so workers can accumulate shards and merge.
    """

    def __init__(self, dim: int = NUM_JOINTS):
        self.n = np.zeros(dim, dtype=np.int64)
        self.mean_x = np.zeros(dim)
        self.mean_y = np.zeros(dim)
        self.m2_x = np.zeros(dim)
        self.m2_y = np.zeros(dim)
        self.c_xy = np.zeros(dim)
        # exact zero-variance detection; rounding in the mean can leave m2 > 0
        self.lo_x = np.full(dim, np.inf)
        self.hi_x = np.full(dim, -np.inf)
        self.lo_y = np.full(dim, np.inf)
        self.hi_y = np.full(dim, -np.inf)

    def update(self, x, y, mask=None) -> "CorrelationAccumulator":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
        mask = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        n_b = mask.sum(axis=0)
        xz = np.where(mask, x, 0.0)
        yz = np.where(mask, y, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mx = np.where(n_b > 0, xz.sum(axis=0) / np.maximum(n_b, 1), 0.0)
            my = np.where(n_b > 0, yz.sum(axis=0) / np.maximum(n_b, 1), 0.0)
        dx = np.where(mask, x - mx, 0.0)
        dy = np.where(mask, y - my, 0.0)
        other = CorrelationAccumulator(x.shape[1])
        other.n = n_b.astype(np.int64)
        other.mean_x, other.mean_y = mx, my
        other.m2_x = (dx * dx).sum(axis=0)
        other.m2_y = (dy * dy).sum(axis=0)
        other.c_xy = (dx * dy).sum(axis=0)
        other.lo_x = np.where(mask, x, np.inf).min(axis=0)
        other.hi_x = np.where(mask, x, -np.inf).max(axis=0)
        other.lo_y = np.where(mask, y, np.inf).min(axis=0)
        other.hi_y = np.where(mask, y, -np.inf).max(axis=0)
        return self.merge(other)

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        n = self.n + other.n
        safe = np.maximum(n, 1)
        dx = other.mean_x - self.mean_x
        dy = other.mean_y - self.mean_y
        w = self.n * other.n / safe
        self.m2_x = self.m2_x + other.m2_x + dx * dx * w
        self.m2_y = self.m2_y + other.m2_y + dy * dy * w
        self.c_xy = self.c_xy + other.c_xy + dx * dy * w
        self.mean_x = self.mean_x + dx * other.n / safe
        self.mean_y = self.mean_y + dy * other.n / safe
        self.n = n
        self.lo_x = np.minimum(self.lo_x, other.lo_x)
        self.hi_x = np.maximum(self.hi_x, other.hi_x)
        self.lo_y = np.minimum(self.lo_y, other.lo_y)
        self.hi_y = np.maximum(self.hi_y, other.hi_y)
        return self

    def pearson(self) -> np.ndarray:
        """r per dimension; NaN where undefined (n < 2 or a zero-variance series)."""
        defined = (self.n >= 2) & (self.hi_x > self.lo_x) & (self.hi_y > self.lo_y)
        r = np.full(self.n.shape, np.nan)
        r[defined] = self.c_xy[defined] / np.sqrt(self.m2_x[defined] * self.m2_y[defined])
        return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class CorrelationReport:
    """Per-joint r (NaN marks undefined) plus the mean over defined joints."""

    r: np.ndarray
    n_used: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.r)

    @property
    def mean_r(self) -> float:
        return float(self.r[self.defined].mean()) if self.defined.any() else float("nan")

    def to_text(self) -> str:
        lines = [f"{'joint':<16}{'r':>10}{'n_used':>10}"]
        for name, r, n in zip(JOINT_NAMES, self.r, self.n_used):
            rs = "undefined" if np.isnan(r) else f"{r:.4f}"
            lines.append(f"{name:<16}{rs:>10}{int(n):>10}")
        mean = "undefined" if np.isnan(self.mean_r) else f"{self.mean_r:.4f}"
        lines.append(f"{'mean':<16}{mean:>10}{int(self.defined.sum()):>10}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"joint": name, "r": None if np.isnan(r) else float(r), "n_used": int(n)}
                for name, r, n in zip(JOINT_NAMES, self.r, self.n_used)
            ],
            "mean_r": None if np.isnan(self.mean_r) else self.mean_r,
        }


def pearson_per_joint(eds: Sequence[EdVector], ses: Sequence[SeVector]) -> CorrelationReport:
    if len(eds) != len(ses):
        raise ValueError(f"length mismatch: {len(eds)} ED vectors vs {len(ses)} SE vectors")
    if not len(eds):
        return CorrelationReport(np.full(NUM_JOINTS, np.nan), np.zeros(NUM_JOINTS, dtype=np.int64))
    x = np.stack([e.values for e in eds])
    y = np.stack([s.values for s in ses])
    mask = np.stack([e.mask for e in eds]) & np.stack([s.mask for s in ses])
    return pearson_from_arrays(x, y, mask)


def pearson_from_arrays(x, y, mask=None) -> CorrelationReport:
    acc = CorrelationAccumulator(np.shape(x)[1]).update(x, y, mask)
    return CorrelationReport(acc.pearson(), acc.n.copy())


def correlate_dataset(dataset: Dataset, normalize: bool = False) -> CorrelationReport:
    ed, mask, se = feature_matrix(dataset, normalize)
    return pearson_from_arrays(ed, se, mask)
