"""Sample records, detector keypoint parsing and the line-delimited fixture format.

Joint arrays are stored as read-only float64 numpy arrays of shape (14, D).
Detector output keeps an explicit ``detected`` flag per joint; coordinates of
undetected joints are stored as NaN so that any code path that forgets the
mask poisons its result instead of silently using garbage.
"""
from __future__ import annotations

import dataclasses
import json
import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .joints import BODY25_NUM_KEYPOINTS, NUM_JOINTS, Joint, load_body25_mapping

SPLITS = ("train", "val", "test")


class ParseError(ValueError):
    """A detector document could not be decoded."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class NoDetection(Exception):
    """The detector document is well formed but contains no people."""


class MultiPersonWarning(UserWarning):
    """More than one person was detected; the most confident one was kept."""


class DatasetError(ValueError):
    """A fixture record violates the record schema or a sample invariant."""


def _frozen_array(values, shape_tail: Tuple[int, ...], name: str, allow_nan: bool = False) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != (NUM_JOINTS,) + shape_tail:
        raise ValueError(f"{name}: expected shape {(NUM_JOINTS,) + shape_tail}, got {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite coordinates")
    arr.setflags(write=False)
    return arr


class Keypoint2D(NamedTuple):
    x: float
    y: float
    confidence: float
    detected: bool


@dataclass(frozen=True, eq=False)
class Camera:
    """Weak-perspective camera: isotropic scale plus a pixel translation."""

    scale: float
    tx: float
    ty: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"camera scale must be > 0, got {self.scale}")

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (self.scale, self.tx, self.ty) == (other.scale, other.tx, other.ty)


@dataclass(frozen=True, eq=False)
class Detections:
    """14 detector keypoints in canonical joint order."""

    xy: np.ndarray
    confidence: np.ndarray
    detected: np.ndarray

    def __post_init__(self):
        detected = np.array(self.detected, dtype=bool)
        if detected.shape != (NUM_JOINTS,):
            raise ValueError(f"detected: expected {NUM_JOINTS} flags, got shape {detected.shape}")
        xy = np.array(self.xy, dtype=np.float64)
        conf = np.array(self.confidence, dtype=np.float64)
        if xy.shape != (NUM_JOINTS, 2) or conf.shape != (NUM_JOINTS,):
            raise ValueError("detections: expected 14x2 coordinates and 14 confidences")
        xy[~detected] = np.nan
        conf[~detected] = np.nan
        if not np.all(np.isfinite(xy[detected])):
            raise ValueError("detections: non-finite coordinates on a detected joint")
        for arr in (xy, conf, detected):
            arr.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "detected", detected)

    @classmethod
    def from_triples(cls, triples: Sequence[Optional[Sequence[float]]]) -> "Detections":
        """Build from 14 ``(x, y, conf)`` triples; ``None`` or conf == 0 means undetected."""
        if len(triples) != NUM_JOINTS:
            raise ValueError(f"expected {NUM_JOINTS} keypoints, got {len(triples)}")
        xy = np.full((NUM_JOINTS, 2), np.nan)
        conf = np.full(NUM_JOINTS, np.nan)
        detected = np.zeros(NUM_JOINTS, dtype=bool)
        for k, t in enumerate(triples):
            if t is None:
                continue
            if len(t) != 3:
                raise ValueError(f"keypoint {k}: expected [x, y, conf], got {list(t)}")
            if float(t[2]) > 0:
                xy[k] = (float(t[0]), float(t[1]))
                conf[k] = float(t[2])
                detected[k] = True
        return cls(xy, conf, detected)

    @classmethod
    def undetected(cls) -> "Detections":
        return cls(np.full((NUM_JOINTS, 2), np.nan), np.full(NUM_JOINTS, np.nan), np.zeros(NUM_JOINTS, bool))

    def __len__(self) -> int:
        return NUM_JOINTS

    def __getitem__(self, joint: Union[int, Joint]) -> Keypoint2D:
        k = int(joint)
        x, y = self.xy[k]
        return Keypoint2D(float(x), float(y), float(self.confidence[k]), bool(self.detected[k]))

    def __iter__(self) -> Iterator[Keypoint2D]:
        return (self[k] for k in range(NUM_JOINTS))

    def __eq__(self, other):
        if not isinstance(other, Detections):
            return NotImplemented
        return (
            np.array_equal(self.detected, other.detected)
            and np.array_equal(self.xy, other.xy, equal_nan=True)
            and np.array_equal(self.confidence, other.confidence, equal_nan=True)
        )

    def to_triples(self) -> List[Optional[List[float]]]:
        return [
            [float(self.xy[k, 0]), float(self.xy[k, 1]), float(self.confidence[k])] if self.detected[k] else None
            for k in range(NUM_JOINTS)
        ]


def _opt_array_eq(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class PoseSample:
    """Everything known about one image: estimator outputs and ground truth."""

    image_id: str
    split: str
    image_size: Tuple[int, int]
    gt_2d: np.ndarray
    op_2d: Detections
    gt_3d: Optional[np.ndarray] = None
    spin_3d: Optional[np.ndarray] = None
    spin_2d: Optional[np.ndarray] = None
    camera: Optional[Camera] = None
    occluded_joint: Optional[Joint] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        object.__setattr__(self, "gt_2d", _frozen_array(self.gt_2d, (2,), "gt_2d"))
        for name, tail in (("gt_3d", (3,)), ("spin_3d", (3,)), ("spin_2d", (2,))):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen_array(value, tail, name))
        if not isinstance(self.op_2d, Detections):
            raise TypeError("op_2d must be a Detections instance")
        if self.occluded_joint is not None:
            object.__setattr__(self, "occluded_joint", Joint.parse(self.occluded_joint))
        if self.spin_2d is None and (self.spin_3d is None or self.camera is None):
            raise ValueError("sample needs spin_2d or both spin_3d and camera")

    def __eq__(self, other):
        if not isinstance(other, PoseSample):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.split == other.split
            and self.image_size == other.image_size
            and np.array_equal(self.gt_2d, other.gt_2d)
            and self.op_2d == other.op_2d
            and _opt_array_eq(self.gt_3d, other.gt_3d)
            and _opt_array_eq(self.spin_3d, other.spin_3d)
            and _opt_array_eq(self.spin_2d, other.spin_2d)
            and self.camera == other.camera
            and self.occluded_joint == other.occluded_joint
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    samples: Tuple[PoseSample, ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            if s.image_id in seen:
                raise DatasetError(f"duplicate image_id {s.image_id!r}")
            seen.add(s.image_id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[PoseSample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def by_split(self, split: str) -> "Dataset":
        return Dataset(tuple(s for s in self.samples if s.split == split), f"{self.name}:{split}")


# ---------------------------------------------------------------------------
# Detector documents


def parse_openpose_record(raw: Union[bytes, str], mapping: Optional[Mapping[Joint, int]] = None) -> Detections:
    """Parse a BODY_25 keypoint document into the 14 canonical joints.

    Raises ParseError for malformed input and NoDetection when the document
    lists no people. With several people, the one with the highest mean
    keypoint confidence is kept and a MultiPersonWarning is emitted.
    """
    if mapping is None:
        mapping = load_body25_mapping()
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", offset=exc.start) from None
    else:
        text = raw
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed keypoint document: {exc.msg}", offset=len(text[: exc.pos].encode("utf-8"))) from None

    if not isinstance(doc, dict) or not isinstance(doc.get("people"), list):
        raise ParseError("keypoint document has no 'people' list")
    people = doc["people"]
    if not people:
        raise NoDetection("no people in keypoint document")

    arrays = []
    for i, person in enumerate(people):
        flat = person.get("pose_keypoints_2d") if isinstance(person, dict) else None
        if not isinstance(flat, list) or len(flat) != 3 * BODY25_NUM_KEYPOINTS:
            raise ParseError(f"person {i}: pose_keypoints_2d must hold {3 * BODY25_NUM_KEYPOINTS} numbers")
        try:
            arrays.append(np.asarray(flat, dtype=np.float64).reshape(BODY25_NUM_KEYPOINTS, 3))
        except (TypeError, ValueError):
            raise ParseError(f"person {i}: non-numeric keypoint values") from None

    best = 0
    if len(arrays) > 1:
        means = [a[:, 2].mean() for a in arrays]
        best = int(np.argmax(means))
        warnings.warn(
            f"{len(arrays)} people detected; keeping person {best} (mean confidence {means[best]:.3f})",
            MultiPersonWarning,
            stacklevel=2,
        )
    kp = arrays[best]
    return Detections.from_triples([tuple(kp[mapping[j]]) for j in Joint])


# ---------------------------------------------------------------------------
# Fixture records


def _pairs(values, width: int, name: str):
    if not isinstance(values, list) or len(values) != NUM_JOINTS:
        n = len(values) if isinstance(values, list) else "non-list"
        raise DatasetError(f"{name}: expected {NUM_JOINTS} joints, got {n}")
    for row in values:
        if not isinstance(row, list) or len(row) != width:
            raise DatasetError(f"{name}: each joint needs {width} coordinates")
    return values


def sample_from_record(rec: Mapping) -> PoseSample:
    for key in ("image_id", "split", "image_size", "gt_2d", "op_2d"):
        if key not in rec:
            raise DatasetError(f"missing required field {key!r}")
    if rec.get("spin_2d") is None and rec.get("spin_3d") is None:
        raise DatasetError("record has neither spin_2d nor spin_3d")
    cam = rec.get("camera")
    camera = Camera(float(cam["s"]), float(cam["tx"]), float(cam["ty"])) if cam is not None else None
    ops = rec["op_2d"]
    if not isinstance(ops, list) or len(ops) != NUM_JOINTS:
        raise DatasetError(f"op_2d: expected {NUM_JOINTS} joints, got {len(ops) if isinstance(ops, list) else 'non-list'}")
    opt = {k: _pairs(rec[k], 3 if k.endswith("3d") else 2, k) for k in ("gt_3d", "spin_3d", "spin_2d") if rec.get(k) is not None}
    try:
        return PoseSample(
            image_id=str(rec["image_id"]),
            split=rec["split"],
            image_size=tuple(rec["image_size"]),
            gt_2d=_pairs(rec["gt_2d"], 2, "gt_2d"),
            op_2d=Detections.from_triples(ops),
            camera=camera,
            occluded_joint=rec.get("occluded_joint"),
            **opt,
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise DatasetError(str(exc)) from None


def sample_to_record(sample: PoseSample) -> dict:
    rec = {
        "image_id": sample.image_id,
        "split": sample.split,
        "image_size": list(sample.image_size),
        "gt_2d": sample.gt_2d.tolist(),
    }
    if sample.gt_3d is not None:
        rec["gt_3d"] = sample.gt_3d.tolist()
    if sample.spin_3d is not None:
        rec["spin_3d"] = sample.spin_3d.tolist()
    if sample.camera is not None:
        rec["camera"] = {"s": sample.camera.scale, "tx": sample.camera.tx, "ty": sample.camera.ty}
    if sample.spin_2d is not None:
        rec["spin_2d"] = sample.spin_2d.tolist()
    rec["op_2d"] = sample.op_2d.to_triples()
    if sample.occluded_joint is not None:
        rec["occluded_joint"] = sample.occluded_joint.label
    return rec


def parse_dataset(lines: Iterable[str], name: str = "dataset") -> Dataset:
    samples = []
    ids = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON: {exc.msg}") from None
        label = f"line {lineno}" + (f" (image_id {rec['image_id']!r})" if isinstance(rec, dict) and "image_id" in rec else "")
        if not isinstance(rec, dict):
            raise DatasetError(f"{label}: record must be an object")
        try:
            sample = sample_from_record(rec)
        except DatasetError as exc:
            raise DatasetError(f"{label}: {exc}") from None
        if sample.image_id in ids:
            raise DatasetError(f"{label}: duplicate image_id, first seen on line {ids[sample.image_id]}")
        ids[sample.image_id] = lineno
        samples.append(sample)
    return Dataset(tuple(samples), name)


def load_dataset(path: Union[str, os.PathLike]) -> Dataset:
    name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    with open(path, "r", encoding="utf-8") as fh:
        return parse_dataset(fh, name)


def dumps_dataset(dataset: Dataset) -> str:
    return "".join(json.dumps(sample_to_record(s)) + "\n" for s in dataset)


def apply_occluder_metadata(sample: PoseSample, joint: Union[Joint, int, str]) -> PoseSample:
    """Record which joint was occluded upstream; numeric fields are untouched."""
    return dataclasses.replace(sample, occluded_joint=Joint.parse(joint))
