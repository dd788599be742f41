"""Occlusion sensitivity sweeps and per-vertex colouring of joint errors.

The estimators themselves (mesh regressor, keypoint detector) are reached
through an adapter that answers "what joints do you see for image X with this
occluder pasted in?". Adapters can replay precomputed answers from a file or
talk to an external process over a JSON-lines pipe.
"""
from __future__ import annotations

import json
import os
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .geometry import OCCLUDER_GRAY, SMPL_NUM_VERTICES, JointRegressor, OccluderSpec, grid_shape, occluder_centered_on_joint, occluder_grid
from .joints import NUM_JOINTS, Joint
from .metrics import mpjpe
from .poses import Dataset, PoseSample

ESTIMATORS = ("SPIN", "OP")
UNITS = {"SPIN": "mm", "OP": "px"}


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class AdapterResponse:
    joints: np.ndarray
    detected: np.ndarray

    @classmethod
    def from_dict(cls, d: Mapping) -> "AdapterResponse":
        if "error" in d:
            raise AdapterError(str(d["error"]))
        joints = np.asarray(d["joints"], dtype=np.float64)
        detected = np.asarray(d.get("detected", [True] * NUM_JOINTS), dtype=bool)
        if joints.ndim != 2 or joints.shape[0] != NUM_JOINTS or joints.shape[1] not in (2, 3):
            raise AdapterError(f"response joints must be 14x2 or 14x3, got {joints.shape}")
        if detected.shape != (NUM_JOINTS,):
            raise AdapterError("response needs 14 detection flags")
        return cls(joints, detected)

    def to_dict(self) -> dict:
        return {"joints": self.joints.tolist(), "detected": self.detected.tolist()}


class EstimatorAdapter(Protocol):
    def estimate(self, image_id: str, occluder: Optional[OccluderSpec]) -> AdapterResponse: ...


def request_dict(image_id: str, occluder: Optional[OccluderSpec]) -> dict:
    return {"image_id": image_id, "occluder": occluder.to_dict() if occluder is not None else None}


def _request_key(image_id: str, occ: Optional[Mapping]):
    if occ is None:
        return (image_id, None)
    return (image_id, int(occ["x0"]), int(occ["y0"]), int(occ["size"]))


class FileAdapter:
    """Replays precomputed responses: one JSON line per (image_id, occluder) with joints and detected flags."""

    def __init__(self, path: Union[str, os.PathLike]):
        self.path = os.fspath(path)
        self._table: Dict[tuple, AdapterResponse] = {}
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                try:
                    self._table[_request_key(rec["image_id"], rec.get("occluder"))] = AdapterResponse.from_dict(rec)
                except (KeyError, AdapterError) as exc:
                    raise ValueError(f"{self.path} line {lineno}: {exc}") from None

    def estimate(self, image_id: str, occluder: Optional[OccluderSpec]) -> AdapterResponse:
        key = _request_key(image_id, occluder.to_dict() if occluder is not None else None)
        try:
            return self._table[key]
        except KeyError:
            raise AdapterError(f"no stored response for {key}") from None


class SubprocessAdapter:
    """Line protocol over a child process's stdin/stdout.

    Requests and responses are matched by order. Access is serialized by a
    lock, so one instance may be shared by worker threads. Once the child dies
    every further request fails.
    """

    def __init__(self, command: Union[str, Sequence[str]]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()
        self._dead: Optional[str] = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        return self._proc

    def estimate(self, image_id: str, occluder: Optional[OccluderSpec]) -> AdapterResponse:
        with self._lock:
            if self._dead:
                raise AdapterError(self._dead)
            proc = self._ensure()
            try:
                proc.stdin.write(json.dumps(request_dict(image_id, occluder)) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                line, err = "", str(exc)
            else:
                err = ""
            if not line:
                proc.poll()
                self._dead = f"adapter process exited (status {proc.returncode}) {err}".strip()
                raise AdapterError(self._dead)
        try:
            return AdapterResponse.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError) as exc:
            raise AdapterError(f"bad adapter response: {exc}") from None

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True, eq=False)
class SensitivityMap:
    """MPJPE per occluder location (rows x cols) or per occluded joint (14); NaN marks a missing cell."""

    kind: str
    grid: np.ndarray
    units: str
    estimator: str
    image_id: Optional[str] = None

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.grid).sum())

    def to_csv(self) -> str:
        g = np.atleast_2d(self.grid)
        lines = [f"{g.shape[0]} {g.shape[1]} {self.units} {self.estimator}"]
        lines += [",".join("nan" if np.isnan(v) else repr(float(v)) for v in row) for row in g]
        return "\n".join(lines) + "\n"

    def to_pgm(self) -> bytes:
        """Grayscale rendering, brighter = larger error; missing cells are black."""
        g = np.atleast_2d(self.grid)
        finite = g[np.isfinite(g)]
        lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 0.0)
        span = hi - lo if hi > lo else 1.0
        img = np.where(np.isfinite(g), np.round(255 * (g - lo) / span), 0).astype(np.uint8)
        return f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode() + img.tobytes()


def read_map_csv(text: str) -> SensitivityMap:
    lines = text.strip().splitlines()
    rows, cols, units, estimator = lines[0].split()
    grid = np.array([[float(v) for v in line.split(",")] for line in lines[1:]], dtype=np.float64)
    if grid.shape != (int(rows), int(cols)):
        raise ValueError(f"map body is {grid.shape}, header says {rows}x{cols}")
    kind = "joint" if grid.shape == (1, NUM_JOINTS) else "location"
    return SensitivityMap(kind, grid[0] if kind == "joint" else grid, units, estimator)


def _ground_truth(sample: PoseSample, estimator: str) -> np.ndarray:
    if estimator == "SPIN":
        if sample.gt_3d is None:
            raise ValueError(f"{sample.image_id}: 3D ground truth required for SPIN sweeps")
        return sample.gt_3d
    return sample.gt_2d


def _cell(adapter: EstimatorAdapter, sample: PoseSample, occ: OccluderSpec, gt: np.ndarray) -> float:
    try:
        resp = adapter.estimate(sample.image_id, occ)
    except AdapterError:
        return float("nan")
    if resp.joints.shape != gt.shape or not resp.detected.any():
        return float("nan")
    return mpjpe(resp.joints, gt, resp.detected)


def _run(tasks, jobs: int):
    if jobs <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _check_estimator(estimator: str):
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")


def sweep_locations(
    dataset: Dataset,
    adapter: EstimatorAdapter,
    size: int = 40,
    stride: int = 20,
    color: Tuple[int, int, int] = OCCLUDER_GRAY,
    estimator: str = "SPIN",
    jobs: int = 1,
) -> List[SensitivityMap]:
    """One heatmap per image: cell (m, n) is MPJPE with the occluder's corner at grid position (m, n).

    SPIN uses 3D joints against ``gt_3d``; OP uses 2D against ``gt_2d``
    over the joints the detector reports. Failed cells are NaN.
    """
    _check_estimator(estimator)
    maps = []
    for sample in dataset:
        gt = _ground_truth(sample, estimator)
        shape = grid_shape(sample.image_size, size, stride)
        occs = occluder_grid(sample.image_size, size, stride, color)
        cells = _run([lambda o=o: _cell(adapter, sample, o, gt) for o in occs], jobs)
        maps.append(SensitivityMap("location", np.array(cells).reshape(shape), UNITS[estimator], estimator, sample.image_id))
    return maps


def sweep_joints(
    dataset: Dataset,
    adapter: EstimatorAdapter,
    size: int = 40,
    color: Tuple[int, int, int] = OCCLUDER_GRAY,
    estimator: str = "SPIN",
    jobs: int = 1,
) -> SensitivityMap:
    """Entry k: MPJPE averaged over images with the occluder centred on joint k's ground-truth pixel."""
    _check_estimator(estimator)
    if not len(dataset):
        raise ValueError("empty dataset")
    per_image = []
    for sample in dataset:
        gt = _ground_truth(sample, estimator)
        occs = [occluder_centered_on_joint(sample.gt_2d[k], size, sample.image_size, color) for k in range(NUM_JOINTS)]
        per_image.append(_run([lambda o=o: _cell(adapter, sample, o, gt) for o in occs], jobs))
    errs = np.array(per_image)
    valid = ~np.isnan(errs)
    with np.errstate(invalid="ignore"):
        grid = np.where(valid.any(axis=0), np.nansum(errs, axis=0) / np.maximum(valid.sum(axis=0), 1), np.nan)
    return SensitivityMap("joint", grid, UNITS[estimator], estimator)


# ---------------------------------------------------------------------------
# mesh colouring


@dataclass(frozen=True, eq=False)
class VertexColoring:
    scalars: np.ndarray
    vmin: float
    vmax: float
    associated: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.scalars.size

    def ramp_position(self) -> np.ndarray:
        if self.vmax <= self.vmin:
            return np.zeros_like(self.scalars)
        return np.clip((self.scalars - self.vmin) / (self.vmax - self.vmin), 0.0, 1.0)

    @property
    def colors(self) -> np.ndarray:
        """RGB uint8 per vertex on a linear blue (min) to red (max) ramp."""
        t = self.ramp_position()
        rgb = np.stack([np.round(255 * t), np.zeros_like(t), np.round(255 * (1 - t))], axis=1)
        return rgb.astype(np.uint8)


Association = Union[Mapping[int, Sequence[int]], Sequence[Sequence[int]]]


def colorize_mesh(values, association: Association, reduce: str = "mean", n_vertices: int = SMPL_NUM_VERTICES) -> VertexColoring:
    """Per-vertex scalar from the values of the joints each vertex is associated with.

    Unassociated vertices sit at the ramp minimum; ramp anchors are the min
    and max of the 14 joint values.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (NUM_JOINTS,) or not np.all(np.isfinite(values)):
        raise ValueError("need 14 finite joint values")
    if reduce not in ("mean", "max"):
        raise ValueError("reduce must be 'mean' or 'max'")
    items = association.items() if isinstance(association, Mapping) else enumerate(association)
    items = [(int(v), [int(k) for k in ks]) for v, ks in items if len(ks)]
    if not items:
        raise ValueError("empty joint-vertex association")
    vmin, vmax = float(values.min()), float(values.max())
    scalars = np.full(n_vertices, vmin)
    associated = np.zeros(n_vertices, dtype=bool)
    fn = np.mean if reduce == "mean" else np.max
    for v, ks in items:
        if not 0 <= v < n_vertices:
            raise ValueError(f"vertex {v} outside mesh of {n_vertices} vertices")
        scalars[v] = fn(values[ks])
        associated[v] = True
    return VertexColoring(scalars, vmin, vmax, associated)


def association_from_regressor(regressor: JointRegressor, eps: float = 1e-6) -> Dict[int, List[int]]:
    """Vertex v belongs to joint k iff the regressor weight W[k, v] exceeds ``eps``."""
    w = regressor.weights
    assoc: Dict[int, List[int]] = {}
    for k, v in zip(*np.nonzero(w > eps)):
        assoc.setdefault(int(v), []).append(int(k))
    return dict(sorted(assoc.items()))


def load_association(path: Union[str, os.PathLike]) -> Dict[int, List[int]]:
    """Text table, one vertex per line: ``vertex joint [joint ...]`` (joints by index or name)."""
    assoc: Dict[int, List[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path} line {lineno}: vertex without joints")
            joints = [int(Joint.parse(int(p) if p.isdigit() else p)) for p in parts[1:]]
            assoc.setdefault(int(parts[0]), []).extend(joints)
    return assoc


def colored_ply(vertices, colors, faces=None) -> str:
    """ASCII PLY with per-vertex uchar RGB."""
    vertices = np.asarray(vertices, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.uint8)
    if vertices.shape[0] != colors.shape[0]:
        raise ValueError("vertex and colour counts differ")
    header = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
              "property float x", "property float y", "property float z",
              "property uchar red", "property uchar green", "property uchar blue"]
    if faces is not None and len(faces):
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    body = [f"{x!r} {y!r} {z!r} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(vertices.tolist(), colors.tolist())]
    if faces is not None:
        body += [" ".join([str(len(f))] + [str(int(i)) for i in f]) for f in faces]
    return "\n".join(header + body) + "\n"
