import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshconf.estimators import (
    MC_LAYERS,
    WJC_LAYERS,
    Artifacts,
    FeatureStats,
    JointRanking,
    LinearJointModel,
    MlpModel,
    TrainConfig,
    classify,
    fit_artifacts,
    fit_linear,
    init_mlp,
    label_arrays,
    mlp_forward,
    mlp_gradients,
    mlp_loss,
    predict_linear,
    raw_mesh_rule,
    raw_worst_joint,
    train_mlp,
)
from meshconf.metrics import EdVector, SeVector


def full(values):
    return EdVector.full(np.asarray(values, dtype=float))


# --- raw rules --------------------------------------------------------------


def test_raw_mesh_rule_examples():
    v = raw_mesh_rule(full(np.zeros(14)), 10.0)
    assert v.label == "good" and v.score == 0.0 and v.technique == "raw"
    e = np.zeros(14)
    e[6] = 10.1
    assert raw_mesh_rule(full(e), 10.0).label == "bad"
    e[6] = 10.0
    assert raw_mesh_rule(full(e), 10.0).label == "good"


def test_raw_rule_ignores_masked_entries():
    e = np.full(14, 50.0)
    mask = np.zeros(14, dtype=bool)
    mask[0] = True
    e[0] = 1.0
    assert raw_mesh_rule(EdVector(e, mask), 10.0).label == "good"
    with pytest.raises(ValueError):
        raw_mesh_rule(EdVector(e, np.zeros(14, dtype=bool)), 10.0)
    with pytest.raises(ValueError):
        raw_worst_joint(EdVector(e, np.zeros(14, dtype=bool)))


@given(st.integers(0, 2**32 - 1), st.floats(0, 30))
def test_raw_rule_matches_loop_max(seed, theta):
    rng = np.random.default_rng(seed)
    e = rng.uniform(0, 30, 14)
    mask = rng.random(14) < 0.7
    mask[rng.integers(14)] = True
    worst = -1.0
    for k in range(14):
        if mask[k] and e[k] > worst:
            worst = e[k]
    v = raw_mesh_rule(EdVector(e, mask), theta)
    assert v.score == worst
    assert v.label == ("good" if worst <= theta else "bad")


def test_raw_worst_joint_examples():
    e = np.zeros(14)
    e[9] = 1.0
    assert raw_worst_joint(full(e)).order[0] == 9
    e = np.zeros(14)
    e[3] = e[7] = 5.0
    r = raw_worst_joint(full(e))
    assert r.order[:2].tolist() == [3, 7]
    assert r.order[2:].tolist() == [0, 1, 2, 4, 5, 6, 8, 9, 10, 11, 12, 13]


@given(st.integers(0, 2**32 - 1))
def test_raw_worst_joint_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    e = rng.integers(0, 6, 14).astype(float)  # small integer range forces ties
    ref = sorted(range(14), key=lambda k: (-e[k], k))
    assert raw_worst_joint(full(e)).order.tolist() == ref


def test_undetected_joints_rank_last_or_by_fill():
    e = np.arange(14, dtype=float)
    mask = np.ones(14, dtype=bool)
    mask[13] = False
    r = raw_worst_joint(EdVector(e, mask))
    assert r.order[0] == 12 and r.order[-1] == 13
    fill = np.zeros(14)
    fill[13] = 100.0
    assert raw_worst_joint(EdVector(e, mask), fill).order[0] == 13


@given(st.integers(0, 2**32 - 1))
def test_argmax_invariant_under_increasing_transform(seed):
    rng = np.random.default_rng(seed)
    e = rng.uniform(0, 10, 14)
    base = raw_worst_joint(full(e)).order
    for f in (np.exp, lambda z: 3 * z + 1, np.sqrt, lambda z: z**3):
        assert raw_worst_joint(full(f(e))).order.tolist() == base.tolist()


@given(st.lists(st.floats(-1e6, 1e6), min_size=14, max_size=14))
def test_ranking_first_attains_max(scores):
    r = JointRanking.from_scores(scores)
    assert r.scores[r.order[0]] == max(scores)
    assert sorted(r.order.tolist()) == list(range(14))


def test_ranking_rejects_nan():
    with pytest.raises(ValueError):
        JointRanking.from_scores([np.nan] + [0.0] * 13)


# --- linear -----------------------------------------------------------------


def test_noiseless_line_recovered(rng):
    ed = rng.uniform(0, 40, (500, 14))
    model = fit_linear(ed, 3 * ed + 2)
    np.testing.assert_allclose(model.m, 3.0, atol=1e-8)
    np.testing.assert_allclose(model.c, 2.0, atol=1e-8)
    assert model.fitted.all()


def test_constant_ed_is_unfit(rng):
    ed = rng.uniform(0, 40, (50, 14))
    ed[:, 2] = 7.0
    model = fit_linear(ed, ed * 2)
    assert not model.fitted[2] and model.m[2] == 1.0 and model.c[2] == 0.0
    assert model.fitted.sum() == 13


def test_single_pair_is_unfit():
    model = fit_linear(np.ones((1, 14)), np.ones((1, 14)))
    assert not model.fitted.any()


def test_random_data_matches_normal_equations(rng):
    ed = rng.gamma(2.0, 4.0, (800, 14))
    se = 0.7 * ed + rng.normal(size=(800, 14)) * 3 + 1
    mask = rng.random((800, 14)) < 0.9
    model = fit_linear(ed, se, mask)
    for k in range(14):
        x = ed[mask[:, k], k]
        y = se[mask[:, k], k]
        a = np.array([[np.sum(x * x), np.sum(x)], [np.sum(x), len(x)]])
        b = np.array([np.sum(x * y), np.sum(y)])
        m, c = np.linalg.solve(a, b)
        assert abs(model.m[k] - m) <= 1e-9 and abs(model.c[k] - c) <= 1e-9
        assert model.n[k] == len(x)


def test_fit_accepts_vector_sequences(rng):
    ed = rng.uniform(1, 10, (30, 14))
    mask = rng.random((30, 14)) < 0.8
    a = fit_linear([EdVector(e, m) for e, m in zip(ed, mask)], [SeVector.full(2 * e) for e in ed])
    b = fit_linear(ed, 2 * ed, mask)
    np.testing.assert_allclose(a.m, b.m)
    np.testing.assert_allclose(a.c, b.c)


@given(st.integers(0, 2**32 - 1))
def test_ols_optimality(seed):
    rng = np.random.default_rng(seed)
    ed = rng.uniform(0, 20, (60, 14))
    se = ed * rng.uniform(0, 2, 14) + rng.normal(size=(60, 14))
    model = fit_linear(ed, se)

    def rss(m, c, k):
        r = se[:, k] - (m * ed[:, k] + c)
        return float(r @ r)

    for k in range(14):
        best = rss(model.m[k], model.c[k], k)
        for dm, dc in ((1e-3, 0), (-1e-3, 0), (0, 1e-3), (0, -1e-3), (1e-3, 1e-3), (-1e-3, 1e-3)):
            assert rss(model.m[k] + dm, model.c[k] + dc, k) >= best


def test_predict_linear_examples():
    ed = full(np.arange(14, dtype=float))
    ident = LinearJointModel.identity()
    np.testing.assert_array_equal(predict_linear(ident, ed).values, ed.values)
    m = LinearJointModel(np.full(14, 2.0), np.full(14, 1.0), np.zeros(14, int), np.zeros(14), np.ones(14, bool))
    e = np.zeros(14)
    e[0] = 3.0
    assert predict_linear(m, full(e)).values[0] == 7.0
    neg = LinearJointModel(np.ones(14), np.full(14, -2.0), np.zeros(14, int), np.zeros(14), np.ones(14, bool))
    assert predict_linear(neg, full(np.zeros(14))).values[0] == 0.0


def test_predict_keeps_mask_unless_filled():
    mask = np.ones(14, dtype=bool)
    mask[4] = False
    ed = EdVector(np.ones(14), mask)
    out = predict_linear(LinearJointModel.identity(), ed)
    assert not out.mask[4]
    out = predict_linear(LinearJointModel.identity(), ed, fill=np.full(14, 9.0))
    assert out.mask.all() and out.values[4] == 9.0


def test_linear_model_document_round_trip(rng):
    ed = rng.uniform(0, 5, (20, 14))
    ed[:, 0] = 1.0
    model = fit_linear(ed, ed + rng.normal(size=ed.shape))
    back = LinearJointModel.from_dict(json.loads(json.dumps(model.to_dict())))
    for name in ("m", "c", "n", "fitted"):
        np.testing.assert_array_equal(getattr(back, name), getattr(model, name))
    assert np.isnan(back.resid_var[0])
    with pytest.raises(ValueError):
        LinearJointModel.from_dict({"kind": "mlp"})


# --- feature preprocessing --------------------------------------------------


def test_feature_stats_fill_is_95th_percentile(rng):
    ed = rng.uniform(0, 100, (101, 14))
    mask = np.ones_like(ed, dtype=bool)
    mask[:50, 0] = False
    stats = FeatureStats.fit(ed, mask)
    col = np.sort(ed[50:, 0])  # 51 values: the 95th percentile sits at position 0.95 * 50 = 47.5
    assert stats.fill[0] == pytest.approx(col[47] + 0.5 * (col[48] - col[47]), abs=1e-12)
    x = stats.transform(ed, mask)
    assert x.shape == ed.shape and np.isfinite(x).all()
    np.testing.assert_allclose(stats.impute(ed, mask)[:50, 0], stats.fill[0])


def test_feature_stats_constant_column():
    ed = np.ones((10, 14))
    stats = FeatureStats.fit(ed, np.ones_like(ed, dtype=bool))
    assert np.all(stats.std == 1.0)
    np.testing.assert_array_equal(stats.transform(ed, np.ones_like(ed, dtype=bool)), 0.0)
    back = FeatureStats.from_dict(json.loads(json.dumps(stats.to_dict())))
    np.testing.assert_array_equal(back.mean, stats.mean)


# --- MLP forward / gradients ------------------------------------------------


def test_zero_network_outputs():
    mc = MlpModel(MC_LAYERS, "binary")
    assert mlp_forward(mc, np.zeros(14)) == 0.5
    wjc = MlpModel(WJC_LAYERS, "softmax")
    np.testing.assert_allclose(mlp_forward(wjc, np.ones(14)), 1 / 14, atol=1e-15)


def test_hand_set_2_2_1_network():
    m = MlpModel((2, 2, 1), "binary")
    m.weights[0][...] = [[1.0, -1.0], [2.0, 0.5]]
    m.biases[0][...] = [0.5, -1.0]
    m.weights[1][...] = [[0.25], [3.0]]
    m.biases[1][...] = [-1.0]
    # x = (1, 2): hidden pre-activations (1 + 4 + 0.5, -1 + 1 - 1) = (5.5, -1) -> relu (5.5, 0)
    # logit = 5.5 * 0.25 + 0 * 3 - 1 = 0.375
    expected = 1.0 / (1.0 + math.exp(-0.375))
    assert abs(mlp_forward(m, [1.0, 2.0]) - expected) <= 1e-12
    m2 = MlpModel((2, 2, 2), "softmax", params=np.r_[m.weights[0].ravel(), m.biases[0], [0.25, 0.0, 3.0, 0.0], [-1.0, 0.0]])
    # logits (0.375, 0) -> softmax
    p = mlp_forward(m2, [1.0, 2.0])
    assert abs(p[0] - math.exp(0.375) / (math.exp(0.375) + 1.0)) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e4))
def test_output_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 14)) * scale
    mc = init_mlp(MC_LAYERS, "binary", rng)
    wjc = init_mlp(WJC_LAYERS, "softmax", rng)
    p = mlp_forward(mc, x)
    assert np.all((p > 0) & (p < 1))
    q = mlp_forward(wjc, x)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)


def test_logistic_regression_gradient(rng):
    m = init_mlp((14, 1), "binary", rng)
    x = rng.normal(size=(1, 14))
    for y in (0, 1):
        loss, g = mlp_gradients(m, x, np.array([y]))
        z = float(x[0] @ m.weights[0][:, 0] + m.biases[0][0])
        p = 1 / (1 + math.exp(-z))
        np.testing.assert_allclose(g[:14], (p - y) * x[0], atol=1e-14)
        assert abs(g[14] - (p - y)) <= 1e-14
        assert loss == pytest.approx(-math.log(p) if y else -math.log(1 - p), rel=1e-12)


def test_dead_relus_give_zero_upstream_gradient(rng):
    m = init_mlp(MC_LAYERS, "binary", rng)
    m.biases[0][...] = -1e6
    x = rng.normal(size=(5, 14))
    _, g = mlp_gradients(m, x, np.array([0, 1, 0, 1, 1]))
    first = m.weights[0].size + m.biases[0].size
    assert np.all(g[:first] == 0.0)


def finite_difference_check(layers, head, rng, n_params=20, points=5, h=1e-5):
    worst = 0.0
    for _ in range(points):
        m = init_mlp(layers, head, rng)
        m.params += rng.normal(size=m.n_params) * 0.05  # move biases off zero
        x = rng.normal(size=(16, 14))
        y = rng.integers(0, 2, 16) if head == "binary" else rng.integers(0, 14, 16)
        _, g = mlp_gradients(m, x, y)
        for i in rng.choice(m.n_params, size=n_params, replace=False):
            old = m.params[i]
            m.params[i] = old + h
            up = mlp_loss(m, x, y)
            m.params[i] = old - h
            down = mlp_loss(m, x, y)
            m.params[i] = old
            fd = (up - down) / (2 * h)
            rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8)
            worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("layers,head", [(MC_LAYERS, "binary"), (WJC_LAYERS, "softmax")])
def test_gradients_match_finite_differences(layers, head, rng):
    assert finite_difference_check(layers, head, rng) < 1e-4


def test_model_document_round_trip(rng):
    m = init_mlp(WJC_LAYERS, "softmax", rng)
    m.input_stats = FeatureStats(np.ones(14), np.zeros(14), np.ones(14))
    back = MlpModel.from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.params, m.params)
    assert back.layer_sizes == WJC_LAYERS and back.head == "softmax"
    np.testing.assert_array_equal(back.input_stats.fill, 1.0)
    with pytest.raises(ValueError):
        MlpModel((14, 2), "binary")


# --- training ---------------------------------------------------------------


def planted_mesh_data(rng, n):
    x = rng.uniform(0, 10, (n, 14))
    # keep a margin around the planted boundary ED[0] = 5 so the set is separable
    x[:, 0] = np.where(rng.random(n) < 0.5, rng.uniform(0, 4.5, n), rng.uniform(5.5, 10, n))
    return x, (x[:, 0] > 5).astype(np.int64)


def planted_argmax_data(rng, n):
    hot = rng.integers(0, 14, n)
    x = rng.uniform(0, 1, (n, 14))
    x[np.arange(n), hot] += 4.0
    return x, hot


def test_mesh_classifier_learns_planted_rule(rng):
    x, y = planted_mesh_data(rng, 2000)
    xt, yt = planted_mesh_data(rng, 2000)
    stats = FeatureStats.fit(x, np.ones_like(x, dtype=bool))
    model, hist = train_mlp(MC_LAYERS, "binary", stats.transform(x, True), y, config=TrainConfig(epochs=100, seed=1))
    acc = np.mean((mlp_forward(model, stats.transform(xt, True)) >= 0.5) == yt)
    assert acc >= 0.99
    assert hist.train_loss[-1] <= hist.train_loss[0]


def test_worst_joint_classifier_learns_planted_argmax(rng):
    x, y = planted_argmax_data(rng, 2000)
    xt, yt = planted_argmax_data(rng, 2000)
    stats = FeatureStats.fit(x, np.ones_like(x, dtype=bool))
    model, hist = train_mlp(WJC_LAYERS, "softmax", stats.transform(x, True), y, config=TrainConfig(epochs=40, seed=2))
    rank1 = np.mean(np.argmax(mlp_forward(model, stats.transform(xt, True)), axis=1) == yt)
    assert rank1 >= 0.99
    assert hist.train_loss[-1] <= hist.train_loss[0]


def test_zero_epochs_returns_initial_model(rng):
    x, y = planted_mesh_data(rng, 50)
    model, hist = train_mlp(MC_LAYERS, "binary", x, y, config=TrainConfig(epochs=0, seed=7))
    init = init_mlp(MC_LAYERS, "binary", np.random.default_rng(7))
    np.testing.assert_array_equal(model.params, init.params)
    assert len(hist.train_loss) == 1


def test_training_is_bitwise_deterministic(rng):
    x, y = planted_mesh_data(rng, 300)
    cfg = TrainConfig(epochs=15, seed=3)
    a, _ = train_mlp(MC_LAYERS, "binary", x[:250], y[:250], x[250:], y[250:], cfg)
    b, _ = train_mlp(MC_LAYERS, "binary", x[:250], y[:250], x[250:], y[250:], cfg)
    assert a.params.tobytes() == b.params.tobytes()
    c, _ = train_mlp(MC_LAYERS, "binary", x[:250], y[:250], x[250:], y[250:], TrainConfig(epochs=15, seed=4))
    assert c.params.tobytes() != a.params.tobytes()


def test_early_stopping_restores_best_validation_params(rng):
    x, y = planted_mesh_data(rng, 120)
    y_val = 1 - y[100:]  # validation labels contradict training, so validation loss rises
    model, hist = train_mlp(MC_LAYERS, "binary", x[:100], y[:100], x[100:], y_val, TrainConfig(epochs=200, patience=5, seed=0))
    assert hist.stopped_early
    assert mlp_loss(model, x[100:], y_val) == pytest.approx(min(hist.val_loss))


def test_training_errors(rng):
    with pytest.raises(ValueError):
        train_mlp(MC_LAYERS, "binary", np.zeros((0, 14)), np.zeros(0))
    x, y = planted_mesh_data(rng, 10)
    x[3, 2] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite loss"):
        train_mlp(MC_LAYERS, "binary", x, y, config=TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# --- unified interface ------------------------------------------------------


def test_labels_inclusive_threshold_and_argmax():
    se = np.zeros((3, 14))
    se[0, 5] = 10.0
    se[1, :] = 9.99
    se[2, [2, 9]] = 4.0
    bad, worst = label_arrays(se, 10.0)
    assert bad.tolist() == [True, False, False]
    assert worst.tolist() == [5, 0, 2]


def test_classify_raw_delegates(rng):
    e = full(rng.uniform(0, 20, 14))
    art = Artifacts(threshold=10.0)
    v, r = classify("raw", art, e)
    assert v == raw_mesh_rule(e, 10.0)
    assert r.order.tolist() == raw_worst_joint(e).order.tolist()


def test_classify_linear_identity_equals_raw(rng):
    e = full(rng.uniform(0, 20, 14))
    art = Artifacts(threshold=10.0, linear=LinearJointModel.identity())
    (v1, r1), (v2, r2) = classify("linear", art, e), classify("raw", art, e)
    assert (v1.label, v1.score) == (v2.label, v2.score) and v1.technique == "linear"
    assert r1.order.tolist() == r2.order.tolist()


def test_classify_missing_models():
    e = full(np.ones(14))
    with pytest.raises(ValueError):
        classify("linear", Artifacts(), e)
    with pytest.raises(ValueError):
        classify("mlp", Artifacts(mc=MlpModel(MC_LAYERS, "binary")), e)
    with pytest.raises(ValueError):
        classify("mlp", Artifacts(mc=MlpModel(WJC_LAYERS, "softmax"), wjc=MlpModel(WJC_LAYERS, "softmax")), e)
    with pytest.raises(ValueError):
        classify("oracle", Artifacts(), e)


def test_classify_mlp_agrees_with_planted_rule(rng):
    def data(n):
        hot = rng.integers(0, 14, n)
        ed = rng.uniform(0, 2, (n, 14))
        level = np.where(rng.random(n) < 0.5, rng.uniform(3, 8, n), rng.uniform(12, 20, n))
        ed[np.arange(n), hot] = level
        return ed, np.ones_like(ed, dtype=bool), ed.copy()

    train, val, test = data(3000), data(500), data(1000)
    art = fit_artifacts(train, 10.0, val=val, config=TrainConfig(seed=0))
    bad, worst = label_arrays(test[2], 10.0)
    hits = 0
    for e, b, w in zip(test[0], bad, worst):
        v, r = classify("mlp", art, full(e))
        hits += (v.label == "bad") == b and r.order[0] == w
    assert hits / len(bad) >= 0.99
