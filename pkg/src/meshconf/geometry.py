"""Joint regression from mesh vertices, weak-perspective projection and occluder placement."""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .joints import NUM_JOINTS
from .poses import Camera

SMPL_NUM_VERTICES = 6890
OCCLUDER_GRAY = (128, 128, 128)


@dataclass(frozen=True, eq=False)
class JointRegressor:
    """K x V matrix mapping mesh vertices to joints (each row a convex combination)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != NUM_JOINTS:
            raise ValueError(f"regressor must be {NUM_JOINTS} x V, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("regressor has non-finite weights")
        sums = w.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-4)
        if bad.size:
            raise ValueError(f"regressor rows {bad.tolist()} do not sum to 1 (sums {sums[bad].tolist()})")
        if (w < 0).any():
            warnings.warn(f"regressor has {(w < 0).sum()} negative weights (min {w.min():.3g})", stacklevel=2)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_vertices(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class OccluderSpec:
    x0: int
    y0: int
    size: int
    color: Tuple[int, int, int] = OCCLUDER_GRAY

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"occluder size must be > 0, got {self.size}")
        if any(not 0 <= c <= 255 for c in self.color):
            raise ValueError(f"occluder color out of range: {self.color}")

    def contains(self, xy) -> np.ndarray:
        """Per-point test of whether pixel positions fall inside the square (half-open)."""
        xy = np.asarray(xy, dtype=np.float64)
        x, y = xy[..., 0], xy[..., 1]
        return (x >= self.x0) & (x < self.x0 + self.size) & (y >= self.y0) & (y < self.y0 + self.size)

    def intersects(self, image_size: Tuple[int, int]) -> bool:
        w, h = image_size
        return self.x0 < w and self.y0 < h and self.x0 + self.size > 0 and self.y0 + self.size > 0

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "size": self.size, "color": list(self.color)}

    @classmethod
    def from_dict(cls, d: dict) -> "OccluderSpec":
        return cls(int(d["x0"]), int(d["y0"]), int(d["size"]), tuple(int(c) for c in d.get("color", OCCLUDER_GRAY)))


def regress_joints(mesh, regressor: Union[JointRegressor, np.ndarray]) -> np.ndarray:
    """X = W M for a V x 3 vertex array; returns 14 x 3 joints."""
    w = regressor.weights if isinstance(regressor, JointRegressor) else np.asarray(regressor, dtype=np.float64)
    m = np.asarray(mesh, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 3:
        raise ValueError(f"mesh must be V x 3, got {m.shape}")
    if w.ndim != 2 or w.shape[1] != m.shape[0]:
        raise ValueError(f"regressor {w.shape} does not match mesh with {m.shape[0]} vertices")
    return w @ m


def project_weak_perspective(joints, cam: Camera, image_size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Drop z, then scale and translate into pixel coordinates.

    ``image_size`` is accepted for interface symmetry; the camera already
    encodes the pixel frame.
    """
    j = np.asarray(joints, dtype=np.float64)
    if j.shape[-1] != 3:
        raise ValueError(f"joints must have 3 coordinates, got shape {j.shape}")
    if not cam.scale > 0:
        raise ValueError("camera scale must be > 0")
    return cam.scale * j[..., :2] + np.array([cam.tx, cam.ty])


def grid_shape(image_size: Tuple[int, int], occluder_size: int, stride: int) -> Tuple[int, int]:
    """(rows, cols) of the occluder sweep."""
    w, h = image_size
    if stride <= 0:
        raise ValueError("stride must be > 0")
    if occluder_size <= 0 or occluder_size > min(w, h):
        raise ValueError(f"occluder size {occluder_size} does not fit image {w}x{h}")
    return (h - occluder_size) // stride + 1, (w - occluder_size) // stride + 1


def occluder_grid(
    image_size: Tuple[int, int], occluder_size: int, stride: int, color: Tuple[int, int, int] = OCCLUDER_GRAY
) -> List[OccluderSpec]:
    """Top-left corners on a regular grid, row-major (y outer, x inner)."""
    rows, cols = grid_shape(image_size, occluder_size, stride)
    return [OccluderSpec(c * stride, r * stride, occluder_size, tuple(color)) for r in range(rows) for c in range(cols)]


def occluder_centered_on_joint(
    joint_xy, size: int, image_size: Tuple[int, int], color: Tuple[int, int, int] = OCCLUDER_GRAY
) -> OccluderSpec:
    w, h = image_size
    if size > min(w, h):
        raise ValueError(f"occluder size {size} does not fit image {w}x{h}")
    x, y = float(joint_xy[0]), float(joint_xy[1])
    # round half up, then clamp so the square stays inside the image
    x0 = min(max(math.floor(x - size / 2 + 0.5), 0), w - size)
    y0 = min(max(math.floor(y - size / 2 + 0.5), 0), h - size)
    return OccluderSpec(int(x0), int(y0), size, tuple(color))


# ---------------------------------------------------------------------------
# file formats


def load_regressor(path: Union[str, os.PathLike]) -> JointRegressor:
    """Read the dense text regressor: header ``K V`` then K rows of V numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'K V'")
        k, v = int(header[0]), int(header[1])
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (k, v):
        raise ValueError(f"{path}: header says {k}x{v}, body is {data.shape[0]}x{data.shape[1]}")
    return JointRegressor(data)


def save_regressor(regressor: JointRegressor) -> str:
    k, v = regressor.weights.shape
    lines = [f"{k} {v}"] + [" ".join(repr(float(x)) for x in row) for row in regressor.weights]
    return "\n".join(lines) + "\n"


def load_mesh(path: Union[str, os.PathLike]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Read vertices (and faces where the format has them) from OBJ, ASCII PLY or a plain V x 3 table."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        verts, faces = [], []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    verts.append([float(p) for p in parts[1:4]])
                elif parts[0] == "f":
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
        return np.array(verts, dtype=np.float64), (np.array(faces, dtype=np.int64) if faces else None)
    if ext == ".ply":
        return _load_ascii_ply(path)
    verts = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if verts.shape[1] != 3:
        raise ValueError(f"{path}: expected V x 3 vertex table")
    return verts, None


def _load_ascii_ply(path: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n_vert = n_face = 0
        for line in fh:
            parts = line.split()
            if parts[:2] == ["format", "binary_little_endian"] or parts[:2] == ["format", "binary_big_endian"]:
                raise ValueError(f"{path}: only ASCII PLY is supported")
            if parts[:2] == ["element", "vertex"]:
                n_vert = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                n_face = int(parts[2])
            elif parts == ["end_header"]:
                break
        verts = np.array([[float(p) for p in fh.readline().split()[:3]] for _ in range(n_vert)], dtype=np.float64)
        faces = [[int(p) for p in fh.readline().split()[1:]] for _ in range(n_face)]
    return verts.reshape(-1, 3), (np.array(faces, dtype=np.int64) if faces else None)
