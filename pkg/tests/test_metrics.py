import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshconf.metrics import (
    CorrelationAccumulator,
    EdVector,
    SeVector,
    compute_ed,
    compute_se,
    correlate_dataset,
    mpjpe,
    pearson_from_arrays,
    pearson_per_joint,
)
from meshconf.poses import Camera, Dataset, Detections, PoseSample


def _sample(spin, op, gt=None, detected=None, image_size=(224, 224)):
    spin = np.asarray(spin, dtype=float)
    detected = np.ones(14, dtype=bool) if detected is None else np.asarray(detected)
    return PoseSample(
        image_id="x",
        split="test",
        image_size=image_size,
        gt_2d=spin if gt is None else np.asarray(gt, dtype=float),
        spin_2d=spin,
        op_2d=Detections(np.asarray(op, dtype=float), np.full(14, 0.9), detected),
    )


def two_pass_pearson(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


# --- ED / SE ----------------------------------------------------------------


def test_ed_zero_when_models_agree(rng):
    p = rng.uniform(0, 224, (14, 2))
    ed = compute_ed(_sample(p, p))
    assert ed.mask.all() and np.all(ed.values == 0.0)


def test_ed_three_four_five():
    spin = np.zeros((14, 2))
    op = np.zeros((14, 2))
    op[0] = [3.0, 4.0]
    assert compute_ed(_sample(spin, op)).values[0] == 5.0


def test_se_examples(rng):
    p = rng.uniform(0, 224, (14, 2))
    assert np.all(compute_se(_sample(p, p, gt=p)).values == 0.0)
    spin = np.ones((14, 2))
    gt = spin.copy()
    gt[0] = [1.0, 2.0]
    se = compute_se(_sample(spin, spin, gt=gt))
    assert se.values[0] == 1.0 and se.mask.all()


@given(st.integers(0, 2**32 - 1))
def test_ed_se_match_scalar_loop(seed):
    rng = np.random.default_rng(seed)
    spin, op, gt = rng.normal(size=(3, 14, 2)) * 80
    det = rng.random(14) < 0.7
    s = _sample(spin, op, gt=gt, detected=det)
    ed, se = compute_ed(s), compute_se(s)
    for k in range(14):
        ref_se = math.sqrt((spin[k, 0] - gt[k, 0]) ** 2 + (spin[k, 1] - gt[k, 1]) ** 2)
        assert abs(se.values[k] - ref_se) <= 1e-12 * max(1.0, ref_se)
        if det[k]:
            ref_ed = math.sqrt((spin[k, 0] - op[k, 0]) ** 2 + (spin[k, 1] - op[k, 1]) ** 2)
            assert abs(ed.values[k] - ref_ed) <= 1e-12 * max(1.0, ref_ed)
        else:
            assert not ed.mask[k] and np.isnan(ed.values[k])


def test_ed_from_projected_3d():
    j3 = np.random.default_rng(3).normal(size=(14, 3))
    cam = Camera(2.0, 10.0, 20.0)
    proj = 2.0 * j3[:, :2] + [10.0, 20.0]
    s = PoseSample(
        image_id="p", split="test", image_size=(224, 224), gt_2d=proj, spin_3d=j3, camera=cam,
        op_2d=Detections(proj + [3.0, 4.0], np.ones(14), np.ones(14, dtype=bool)),
    )
    np.testing.assert_allclose(compute_ed(s).values, 5.0, atol=1e-12)
    np.testing.assert_allclose(compute_se(s).values, 0.0, atol=1e-12)


def test_normalize_rescales_to_224_frame():
    spin = np.zeros((14, 2))
    op = np.zeros((14, 2))
    op[:, 0] = 4.0
    s = _sample(spin, op, image_size=(448, 300))
    assert compute_ed(s).values[0] == 4.0
    assert compute_ed(s, normalize=True).values[0] == 2.0


@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_ed_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    spin, op = rng.integers(-500, 500, size=(2, 14, 2)).astype(float)
    dx, dy = float(np.round(dx)), float(np.round(dy))  # integer shifts keep the subtraction exact
    a = compute_ed(_sample(spin, op)).values
    b = compute_ed(_sample(spin + [dx, dy], op + [dx, dy])).values
    np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_ed_scale_equivariance(seed, s):
    rng = np.random.default_rng(seed)
    spin, op = rng.normal(size=(2, 14, 2)) * 100
    a = compute_ed(_sample(spin, op)).values
    b = compute_ed(_sample(spin * s, op * s)).values
    np.testing.assert_allclose(b, s * a, rtol=1e-12, atol=1e-12)


# --- MPJPE ------------------------------------------------------------------


def test_mpjpe_examples(rng):
    p = rng.normal(size=(14, 3))
    assert mpjpe(p, p) == 0.0
    pred = np.zeros((14, 2))
    gt = np.zeros((14, 2))
    pred[2] = [3.0, 0.0]
    pred[9] = [0.0, 5.0]
    mask = np.zeros(14, dtype=bool)
    mask[[2, 9]] = True
    assert mpjpe(pred, gt, mask) == 4.0
    with pytest.raises(ValueError):
        mpjpe(pred, gt, np.zeros(14, dtype=bool))


@given(st.integers(0, 2**32 - 1))
def test_mpjpe_reference_loop_and_permutation(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.normal(size=(2, 14, 3)) * 100
    mask = rng.random(14) < 0.8
    mask[rng.integers(14)] = True
    dists = [math.sqrt(sum((pred[k, c] - gt[k, c]) ** 2 for c in range(3))) for k in range(14) if mask[k]]
    ref = math.fsum(dists) / len(dists)
    assert abs(mpjpe(pred, gt, mask) - ref) <= 1e-12 * max(1.0, ref)
    perm = rng.permutation(14)
    assert mpjpe(pred[perm], gt[perm], mask[perm]) == pytest.approx(mpjpe(pred, gt, mask), rel=1e-14)


# --- correlation ------------------------------------------------------------


def test_perfect_line_gives_r_one(rng):
    ed = rng.uniform(0, 50, size=(100, 14))
    eds = [EdVector.full(e) for e in ed]
    ses = [SeVector.full(2 * e + 1) for e in ed]
    rep = pearson_per_joint(eds, ses)
    np.testing.assert_allclose(rep.r, 1.0, atol=1e-12)
    assert rep.mean_r == pytest.approx(1.0)
    assert rep.n_used.tolist() == [100] * 14


def test_constant_series_is_undefined(rng):
    ed = rng.uniform(0, 50, size=(50, 14))
    ed[:, 4] = 0.1  # a value with no exact binary representation
    se = rng.uniform(0, 50, size=(50, 14))
    rep = pearson_from_arrays(ed, se)
    assert np.isnan(rep.r[4]) and not rep.defined[4]
    assert rep.defined.sum() == 13
    assert rep.mean_r == pytest.approx(np.mean(np.delete(rep.r, 4)))
    assert "undefined" in rep.to_text().splitlines()[5]
    assert rep.to_dict()["joints"][4]["r"] is None


def test_fewer_than_two_pairs_is_undefined():
    rep = pearson_from_arrays(np.ones((1, 14)), np.ones((1, 14)))
    assert not rep.defined.any() and np.isnan(rep.mean_r)
    assert rep.to_text().splitlines()[-1].split()[1] == "undefined"
    empty = pearson_per_joint([], [])
    assert not empty.defined.any()


def test_length_mismatch():
    with pytest.raises(ValueError):
        pearson_per_joint([EdVector.full(np.zeros(14))], [])


def test_pearson_matches_two_pass_reference_with_masks(rng):
    n = 1000
    x = rng.gamma(2.0, 3.0, size=(n, 14))
    y = 0.5 * x + rng.normal(size=(n, 14)) * 2 + 7
    mask = rng.random((n, 14)) < 0.85
    eds = [EdVector(xi, mi) for xi, mi in zip(x, mask)]
    ses = [SeVector.full(yi) for yi in y]
    rep = pearson_per_joint(eds, ses)
    for k in range(14):
        sel = mask[:, k]
        ref = two_pass_pearson(x[sel, k].tolist(), y[sel, k].tolist())
        assert abs(rep.r[k] - ref) <= 1e-10
        assert rep.n_used[k] == sel.sum()


def test_accumulator_merge_equals_single_pass(rng):
    x, y = rng.normal(size=(2, 300, 14)) + 100.0
    mask = rng.random((300, 14)) < 0.9
    whole = CorrelationAccumulator().update(x, y, mask).pearson()
    parts = [CorrelationAccumulator().update(x[a:b], y[a:b], mask[a:b]) for a, b in ((0, 7), (7, 150), (150, 300))]
    merged = parts[2].merge(parts[0]).merge(parts[1]).pearson()
    np.testing.assert_allclose(merged, whole, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100), st.floats(0.01, 100), st.floats(-100, 100))
def test_r_bounded_and_affine_invariant(seed, a, b, c, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 14))
    y = x * rng.normal(size=14) + rng.normal(size=(40, 14))
    r0 = pearson_from_arrays(x, y).r
    r1 = pearson_from_arrays(a * x + b, c * y + d).r
    assert np.all((r0 >= -1) & (r0 <= 1))
    np.testing.assert_allclose(r0, r1, atol=1e-9)


def test_correlate_dataset_excludes_undetected_pairs():
    rng = np.random.default_rng(5)
    samples = []
    for i in range(30):
        spin = rng.uniform(0, 200, (14, 2))
        gt = spin + rng.normal(size=(14, 2))
        det = np.ones(14, dtype=bool)
        det[0] = i % 3 != 0
        samples.append(PoseSample(
            image_id=f"s{i}", split="test", image_size=(224, 224), gt_2d=gt, spin_2d=spin,
            op_2d=Detections(spin + rng.normal(size=(14, 2)), np.ones(14), det),
        ))
    rep = correlate_dataset(Dataset(tuple(samples), "d"))
    assert rep.n_used[0] == 20 and rep.n_used[1] == 30
