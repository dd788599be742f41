import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = os.path.join(os.path.dirname(__file__), "data")


def data_path(name: str) -> str:
    return os.path.join(DATA, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(ed, se, mask=None, split="test", name="toy"):
    """Samples whose ED and SE equal the given (n, 14) arrays exactly.

    Ground truth sits at the origin, the mesh joint at (se, 0) and the
    detection at (se, ed), so both distances are a single coordinate.
    """
    from meshconf.poses import Dataset, Detections, PoseSample

    ed = np.asarray(ed, dtype=float)
    se = np.asarray(se, dtype=float)
    mask = np.ones(ed.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    samples = []
    for i, (e, s, m) in enumerate(zip(ed, se, mask)):
        spin = np.stack([s, np.zeros(14)], axis=1)
        det = Detections.from_triples([[s[k], e[k], 1.0] if m[k] else None for k in range(14)])
        samples.append(PoseSample(f"{name}-{i:05d}", split, (224, 224), np.zeros((14, 2)), det, spin_2d=spin))
    return Dataset(tuple(samples), name)
