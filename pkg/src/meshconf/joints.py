"""Canonical 14-joint vocabulary and the detector keypoint mapping table."""
from __future__ import annotations

import json
from enum import IntEnum
from importlib import resources
from typing import Dict, Mapping, Union

NUM_JOINTS = 14

# BODY_25 has 25 keypoints of (x, y, confidence)
BODY25_NUM_KEYPOINTS = 25


class Joint(IntEnum):
    RIGHT_ANKLE = 0
    RIGHT_KNEE = 1
    RIGHT_HIP = 2
    LEFT_HIP = 3
    LEFT_KNEE = 4
    LEFT_ANKLE = 5
    RIGHT_WRIST = 6
    RIGHT_ELBOW = 7
    RIGHT_SHOULDER = 8
    LEFT_SHOULDER = 9
    LEFT_ELBOW = 10
    LEFT_WRIST = 11
    NECK = 12
    HEAD_TOP = 13

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, value: Union[str, int, "Joint"]) -> "Joint":
        """Accept a joint index, a hyphenated label ("left-wrist") or an enum name."""
        if isinstance(value, Joint):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().upper().replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown joint {value!r}") from None


JOINT_NAMES = tuple(j.label for j in Joint)


def load_body25_mapping(path=None) -> Dict[Joint, int]:
    """Load the canonical-joint -> BODY_25 index table.

    The packaged table is used unless ``path`` points at an override file with
    the same layout (one key per joint label, keys starting with ``_`` ignored).
    """
    if path is None:
        text = resources.files("meshconf.data").joinpath("body25_to_lsp14.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return validate_mapping({k: v for k, v in raw.items() if not k.startswith("_")})


def validate_mapping(raw: Mapping[Union[str, int, Joint], int]) -> Dict[Joint, int]:
    table = {Joint.parse(k): int(v) for k, v in raw.items()}
    missing = [j.label for j in Joint if j not in table]
    if missing:
        raise ValueError(f"mapping table lacks joints: {', '.join(missing)}")
    for joint, idx in table.items():
        if not 0 <= idx < BODY25_NUM_KEYPOINTS:
            raise ValueError(f"mapping for {joint.label} out of range: {idx}")
    return table
