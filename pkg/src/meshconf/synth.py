"""Seeded synthetic pose datasets with a tunable ED/SE correlation.

Per joint and sample, the mesh error magnitude (SE) and the mesh/detector
disagreement (ED) are

    SE = se_scale[k] * Ms * (a*D + b*N1)
    ED = ed_scale[k] * Me * (a*D + b*N2)

where the difficulty D = G + coupling * L mixes a per-joint term G with a
per-limb term L shared by the joints of one limb, N1 and N2 are independent
noise, and every base variable is Gamma(shape, 1). The weights (a, b) are
solved in closed form so that corr(ED, SE) equals ``target_rho`` in the
occlusion-free model.

Occlusion sets the multipliers (Ms, Me):

* the occluded joint gets Ms = boost, Me = 1: the mesh regressor and the
  detector both go wrong in the same direction, so they still agree. With
  probability ``detector_miss_rate`` the detector drops the joint instead;
* its kinematic neighbours get Ms = 1, Me = boost: the detector loses the
  limb links around the occluder while the mesh stays put;
* every other joint keeps (1, 1).

So a single joint's ED can point away from the worst joint, and only the
pattern across joints gives it away. Occlusion lowers the measured
correlation; ``expected_correlation`` gives the closed form. Directions are
uniform and the coordinates are built so the Euclidean distances reproduce
the planted magnitudes exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .geometry import OccluderSpec, project_weak_perspective
from .joints import NUM_JOINTS, Joint
from .poses import Camera, Dataset, Detections, PoseSample
from .sensitivity import AdapterError, AdapterResponse

GAMMA_SHAPE = 2.0
LIMB_COUPLING = 4.0
# limb id per joint: right leg, left leg, right arm, left arm, head/neck
LIMB_OF_JOINT = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4])
N_LIMBS = 5
SKELETON_EDGES = (
    (0, 1), (1, 2), (3, 4), (4, 5), (2, 3),
    (6, 7), (7, 8), (9, 10), (10, 11),
    (8, 12), (9, 12), (12, 13), (2, 8), (3, 9),
)
NEIGHBOURS = tuple(
    tuple(sorted({b for a, b in SKELETON_EDGES if a == k} | {a for a, b in SKELETON_EDGES if b == k}))
    for k in range(14)
)

# mm, camera frame, y pointing down the image
TEMPLATE_3D = np.array(
    [
        [-100.0, 850.0, 0.0],   # right-ankle
        [-100.0, 450.0, 20.0],  # right-knee
        [-100.0, 0.0, 0.0],     # right-hip
        [100.0, 0.0, 0.0],      # left-hip
        [100.0, 450.0, 20.0],   # left-knee
        [100.0, 850.0, 0.0],    # left-ankle
        [-250.0, -50.0, 50.0],  # right-wrist
        [-230.0, -280.0, 20.0], # right-elbow
        [-180.0, -500.0, 0.0],  # right-shoulder
        [180.0, -500.0, 0.0],   # left-shoulder
        [230.0, -280.0, 20.0],  # left-elbow
        [250.0, -50.0, 50.0],   # left-wrist
        [0.0, -540.0, 0.0],     # neck
        [0.0, -780.0, 0.0],     # head-top
    ]
)

# Per-joint error scales (pixels per unit of the mixed gamma variable).
# Extremities drift more for the mesh regressor; the detector's scale pattern
# is deliberately different so raw ED is a miscalibrated proxy across joints.
SE_SCALE = np.array([1.14, 0.92, 0.66, 0.66, 0.92, 1.14, 1.32, 1.01, 0.62, 0.62, 1.01, 1.32, 0.53, 0.79])
ED_SCALE = np.array([1.6, 2.0, 3.0, 3.0, 2.0, 1.6, 2.2, 2.4, 2.6, 2.6, 2.4, 2.2, 1.4, 3.2])


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 1000
    seed: int = 0
    target_rho: float = 0.7
    occlusion_rate: float = 0.0
    occlusion_error_boost: float = 3.0
    detector_miss_rate: float = 0.5
    image_size: Tuple[int, int] = (224, 224)
    split: str = "train"
    id_prefix: str = "synth"

    def __post_init__(self):
        for name in ("target_rho", "occlusion_rate", "detector_miss_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.occlusion_error_boost < 1.0:
            raise ValueError("occlusion_error_boost must be >= 1")
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @classmethod
    def from_mapping(cls, d) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def mixture_correlation(
    w: float, regimes=((1.0, 1.0, 1.0),), shape: float = GAMMA_SHAPE, coupling: float = LIMB_COUPLING
) -> float:
    """corr(Ms*(aD + bN1), Me*(aD + bN2)) with a = sqrt(w), b = sqrt(1 - w).

    ``regimes`` lists (probability, Ms, Me) triples; D = G + coupling * L with
    G, L, N1, N2 iid Gamma(shape, 1).
    """
    a, b = math.sqrt(w), math.sqrt(1.0 - w)
    mu = var = shape
    mu_d, var_d = mu * (1.0 + coupling), var * (1.0 + coupling * coupling)
    mean0 = a * mu_d + b * mu
    var0 = a * a * var_d + b * b * var
    cov0 = a * a * var_d
    e_s = sum(p * ms for p, ms, _ in regimes)
    e_e = sum(p * me for p, _, me in regimes)
    e_ss = sum(p * ms * ms for p, ms, _ in regimes)
    e_ee = sum(p * me * me for p, _, me in regimes)
    e_se = sum(p * ms * me for p, ms, me in regimes)
    cov = e_se * (cov0 + mean0 * mean0) - e_s * e_e * mean0 * mean0
    var_s = e_ss * (var0 + mean0 * mean0) - e_s * e_s * mean0 * mean0
    var_e = e_ee * (var0 + mean0 * mean0) - e_e * e_e * mean0 * mean0
    return cov / math.sqrt(var_s * var_e)


def joint_regimes(config: "SynthConfig", k: int):
    """(probability, Ms, Me) for joint k, conditioned on the joint being detected."""
    p_occ = config.occlusion_rate / NUM_JOINTS
    p_nb = p_occ * len(NEIGHBOURS[k])
    miss = config.detector_miss_rate
    boost = config.occlusion_error_boost
    used = 1.0 - p_occ * miss
    return [
        ((1.0 - p_occ - p_nb) / used, 1.0, 1.0),
        (p_occ * (1.0 - miss) / used, boost, 1.0),
        (p_nb / used, 1.0, boost),
    ]


def calibrate_mixing(config: "SynthConfig") -> float:
    """Mixing weight w in [0, 1] at which the occlusion-free correlation equals target_rho.

    Occlusion is a perturbation on top of this base model; see
    ``expected_correlation`` for what it does to the measured value.
    """
    target = config.target_rho
    f = lambda w: mixture_correlation(w) - target
    if f(0.0) >= 0.0:
        return 0.0
    if f(1.0) <= 0.0:
        return 1.0
    return float(brentq(f, 0.0, 1.0, xtol=1e-14))


def expected_correlation(config: "SynthConfig") -> np.ndarray:
    """Closed-form per-joint corr(ED, SE) over detected pairs, occlusion included."""
    w = calibrate_mixing(config)
    return np.array([mixture_correlation(w, joint_regimes(config, k)) for k in range(NUM_JOINTS)])


def _rotation(yaw: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cr, sr = math.cos(roll), math.sin(roll)
    r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    r_roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return r_roll @ r_yaw


def _skeleton(rng: np.random.Generator, image_size: Tuple[int, int]):
    """Template skeleton under a random similarity transform plus joint jitter."""
    w, h = image_size
    rot = _rotation(rng.uniform(-math.pi / 4, math.pi / 4), rng.uniform(-0.17, 0.17))
    gt_3d = TEMPLATE_3D @ rot.T + rng.normal(0.0, 25.0, size=(NUM_JOINTS, 3))
    gt_3d = gt_3d + np.array([0.0, 0.0, 4000.0])
    extent = np.ptp(gt_3d[:, 1])
    scale = rng.uniform(0.72, 0.85) * h / extent
    centre = 0.5 * (gt_3d[:, :2].min(axis=0) + gt_3d[:, :2].max(axis=0))
    shift = rng.uniform(-0.04, 0.04, size=2) * np.array([w, h])
    cam = Camera(float(scale), float(w / 2 - scale * centre[0] + shift[0]), float(h / 2 - scale * centre[1] + shift[1]))
    return gt_3d, project_weak_perspective(gt_3d, cam, image_size)


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def _sample(config: SynthConfig, index: int, a: float, b: float) -> PoseSample:
    rng = np.random.default_rng([config.seed, index])
    gt_3d, gt_2d = _skeleton(rng, config.image_size)

    occluded: Optional[int] = None
    if rng.random() < config.occlusion_rate:
        occluded = int(rng.integers(NUM_JOINTS))
    ms = np.ones(NUM_JOINTS)
    me = np.ones(NUM_JOINTS)
    if occluded is not None:
        ms[occluded] = config.occlusion_error_boost
        me[list(NEIGHBOURS[occluded])] = config.occlusion_error_boost

    g, n1, n2 = rng.gamma(GAMMA_SHAPE, 1.0, size=(3, NUM_JOINTS))
    limb = rng.gamma(GAMMA_SHAPE, 1.0, size=N_LIMBS)
    d = g + LIMB_COUPLING * limb[LIMB_OF_JOINT]
    se = SE_SCALE * ms * (a * d + b * n1)
    ed = ED_SCALE * me * (a * d + b * n2)
    spin_2d = gt_2d + se[:, None] * _unit_vectors(rng, NUM_JOINTS)
    op_xy = spin_2d + ed[:, None] * _unit_vectors(rng, NUM_JOINTS)

    conf = rng.uniform(0.35, 1.0, size=NUM_JOINTS)
    detected = np.ones(NUM_JOINTS, dtype=bool)
    miss_draw = rng.random()
    if occluded is not None and miss_draw < config.detector_miss_rate:
        detected[occluded] = False
    return PoseSample(
        image_id=f"{config.id_prefix}-{config.seed}-{index:06d}",
        split=config.split,
        image_size=config.image_size,
        gt_2d=gt_2d,
        gt_3d=gt_3d,
        spin_2d=spin_2d,
        op_2d=Detections(op_xy, conf, detected),
        occluded_joint=Joint(occluded) if occluded is not None else None,
    )


def generate(config: SynthConfig, start_index: int = 0) -> Dataset:
    """Deterministic in ``config``: sample i draws from its own stream seeded by (seed, start_index + i)."""
    w = calibrate_mixing(config)
    a, b = math.sqrt(w), math.sqrt(1.0 - w)
    samples = tuple(_sample(config, start_index + i, a, b) for i in range(config.n_samples))
    return Dataset(samples, f"synth-{config.seed}")


class SyntheticAdapter:
    """Answers occluder requests in joint space for a known dataset.

    Each (image, joint) has a fixed baseline error; a joint whose ground-truth
    pixel lies inside the occluder gets ``boost`` times that error plus
    ``occlusion_error``, and the detector may lose it (``miss_rate``).
    """

    def __init__(
        self,
        dataset: Dataset,
        estimator: str = "OP",
        seed: int = 0,
        base_error: float = 4.0,
        occlusion_error: float = 0.0,
        boost: float = 3.0,
        miss_rate: float = 0.0,
    ):
        if estimator not in ("SPIN", "OP"):
            raise ValueError("estimator must be SPIN or OP")
        self.estimator = estimator
        self.seed = seed
        self.boost = boost
        self.occlusion_error = occlusion_error
        self.miss_rate = miss_rate
        self._index = {s.image_id: i for i, s in enumerate(dataset)}
        self._samples = dataset.samples
        dim = 3 if estimator == "SPIN" else 2
        self._baseline = []
        for i, s in enumerate(dataset):
            if estimator == "SPIN" and s.gt_3d is None:
                raise ValueError(f"{s.image_id}: SPIN adapter needs gt_3d")
            rng = np.random.default_rng([seed, i, 1])
            direction = rng.normal(size=(NUM_JOINTS, dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            mag = base_error * rng.uniform(0.5, 1.5, size=NUM_JOINTS)
            self._baseline.append((direction, mag))

    def covered(self, image_id: str, occluder: Optional[OccluderSpec]) -> np.ndarray:
        if occluder is None:
            return np.zeros(NUM_JOINTS, dtype=bool)
        return occluder.contains(self._samples[self._index[image_id]].gt_2d)

    def estimate(self, image_id: str, occluder: Optional[OccluderSpec]) -> AdapterResponse:
        if image_id not in self._index:
            raise AdapterError(f"unknown image {image_id!r}")
        i = self._index[image_id]
        sample = self._samples[i]
        direction, mag = self._baseline[i]
        hit = self.covered(image_id, occluder)
        mag = np.where(hit, mag * self.boost + self.occlusion_error, mag)
        gt = sample.gt_3d if self.estimator == "SPIN" else sample.gt_2d
        detected = np.ones(NUM_JOINTS, dtype=bool)
        if self.estimator == "OP" and occluder is not None and self.miss_rate > 0:
            rng = np.random.default_rng([self.seed, i, 2, occluder.x0, occluder.y0, occluder.size])
            detected &= ~(hit & (rng.random(NUM_JOINTS) < self.miss_rate))
        return AdapterResponse(gt + mag[:, None] * direction, detected)


def make_adapter(config: SynthConfig, dataset: Dataset, estimator: str = "OP", **kwargs) -> SyntheticAdapter:
    kwargs.setdefault("boost", config.occlusion_error_boost)
    return SyntheticAdapter(dataset, estimator, seed=config.seed, **kwargs)
