import json
import math
import zlib
from datetime import date, timedelta

import numpy as np
import pytest

from drawdown_risk.errors import DivergenceError, NotTrainedError, StaleCacheError
from drawdown_risk.models import (
    BatchNormParams,
    ModelConfig,
    Network,
    RegularizationConfig,
    RiskIndicatorSeries,
    TrainConfig,
    backward,
    batch_norm_forward,
    cross_entropy,
    dumps_model,
    forward,
    gru_forward,
    indicator_from_model,
    indicator_values,
    loads_model,
    loss,
    mc_dropout_predict,
    mse,
    penalty,
    penalty_grad,
    smooth_indicator,
    train,
)
from drawdown_risk.models.training import TrainedModel
from drawdown_risk.preprocess import NoiseConfig

import gradcheck

XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0.0, 1.0, 1.0, 0.0])


def dates(n):
    return tuple(date(2021, 1, 1) + timedelta(days=i) for i in range(n))


# -- configs -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig("mlp", layer_sizes=())
    with pytest.raises(ValueError):
        ModelConfig("mlp", dropout_p=1.0)
    with pytest.raises(ValueError):
        ModelConfig("logistic", task="regression")
    with pytest.raises(ValueError):
        ModelConfig("gru", batch_norm=True)
    with pytest.raises(ValueError):
        ModelConfig("mlp", activation="gelu")
    with pytest.raises(ValueError):
        RegularizationConfig(lam=-1)
    with pytest.raises(ValueError):
        RegularizationConfig(l1_ratio=1.5)
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)
    cfg = ModelConfig("mlp", layer_sizes=[3, 2])
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# -- forward -----------------------------------------------------------------


def test_linear_dot_product():
    net = Network.create(ModelConfig("linear", "regression"), 2)
    net.params["W0"] = np.array([[1.0], [1.0]])
    net.params["b0"] = np.zeros(1)
    assert forward(net, [[2.0, 3.0]])[0].tolist() == [5.0]


def test_zero_mlp_outputs_half():
    net = Network.create(ModelConfig("mlp", layer_sizes=(4, 3), activation="sigmoid"), 3)
    for k in net.params:
        net.params[k] = np.zeros_like(net.params[k])
    out, _ = forward(net, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(out, 0.5)


def test_mlp_matches_straight_line_reimplementation():
    net = Network.create(ModelConfig("mlp", "regression", layer_sizes=(4,), activation="tanh", seed=11), 2)
    x = np.array([0.3, -1.2])
    W0, b0, W1, b1 = (net.params[k] for k in ("W0", "b0", "W1", "b1"))
    hidden = [math.tanh(sum(x[i] * W0[i, j] for i in range(2)) + b0[j]) for j in range(4)]
    want = sum(hidden[j] * W1[j, 0] for j in range(4)) + b1[0]
    assert forward(net, x[None])[0][0] == pytest.approx(want, abs=1e-14)


def test_forward_errors():
    net = Network.create(ModelConfig("linear", "regression"), 2)
    with pytest.raises(ValueError):
        forward(net, np.ones((3, 3)))
    with pytest.raises(ValueError):
        forward(net, [[np.nan, 1.0]])


def test_classification_outputs_in_unit_interval():
    net = Network.create(ModelConfig("mlp", layer_sizes=(5,), seed=2), 3)
    out, _ = forward(net, np.random.default_rng(1).normal(scale=50, size=(100, 3)))
    assert np.all((out >= 0) & (out <= 1))


# -- GRU ---------------------------------------------------------------------


def gru_params(H=1, n_in=1, value=0.0):
    p = {}
    for g in "zrh":
        p[f"W_{g}"] = np.full((n_in, H), value)
        p[f"U_{g}"] = np.full((H, H), value)
        p[f"b_{g}"] = np.full(H, value)
    p["W_out"] = np.full((H, 1), value)
    p["b_out"] = np.zeros(1)
    return p


def test_gru_zero_weights_fixed_point():
    hs, out = gru_forward(gru_params(H=3, n_in=2), np.ones((4, 2)))
    np.testing.assert_array_equal(hs, 0.0)
    assert out == 0.0


def test_gru_scalar_hand_trace():
    p = gru_params()
    p.update(W_z=np.array([[0.5]]), U_z=np.array([[-0.3]]), b_z=np.array([0.1]),
             W_r=np.array([[0.7]]), U_r=np.array([[0.2]]), b_r=np.array([-0.1]),
             W_h=np.array([[1.1]]), U_h=np.array([[0.4]]), b_h=np.array([0.05]))
    sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
    h = 0.0
    for x in (1.0, -2.0):
        z = sig(0.5 * x - 0.3 * h + 0.1)
        r = sig(0.7 * x + 0.2 * h - 0.1)
        hh = math.tanh(1.1 * x + 0.4 * (r * h) + 0.05)
        h = (1 - z) * h + z * hh
    hs, _ = gru_forward(p, np.array([[1.0], [-2.0]]))
    assert hs[-1, 0] == pytest.approx(h, abs=1e-15)


def test_gru_fixed_point_stable():
    rng = np.random.default_rng(5)
    p = {k: rng.normal(scale=0.3, size=v.shape) for k, v in gru_params(H=3, n_in=2).items()}
    hs, _ = gru_forward(p, np.tile([0.2, -0.4], (400, 1)))
    h_star = hs[-1]
    nxt, _ = gru_forward(p, np.array([[0.2, -0.4]]), h0=h_star)
    assert np.max(np.abs(nxt[0] - h_star)) < 1e-15


def test_gru_batch_forward_matches_single():
    net = Network.create(ModelConfig("gru", "regression", hidden_size=3, seed=4), 2)
    X = np.random.default_rng(0).normal(size=(5, 6, 2))
    batch = forward(net, X)[0]
    single = [gru_forward(net.params, seq)[1] for seq in X]
    np.testing.assert_allclose(batch, single, atol=1e-14)


def test_gru_dimension_mismatch():
    with pytest.raises(ValueError):
        gru_forward(gru_params(H=2, n_in=2), np.ones((3, 3)))
    with pytest.raises(ValueError):
        gru_forward(gru_params(H=2, n_in=2), np.ones((0, 2)))


# -- losses ------------------------------------------------------------------


def test_loss_examples():
    assert loss([0.5], [1.0], "cross_entropy") == pytest.approx(math.log(2))
    assert mse([1, 2], [1, 2]) == 0.0
    params = {"W0": np.array([[1.0, -2.0]]), "b0": np.array([5.0])}
    assert penalty(params, RegularizationConfig(0.5, 0.0)) == pytest.approx(0.5 * 0.5 * 5)
    assert penalty(params, RegularizationConfig(0.5, 1.0)) == pytest.approx(0.5 * 3)
    mixed = RegularizationConfig(0.5, 0.25)
    assert penalty(params, mixed) == pytest.approx(0.25 * 0.5 * 3 + 0.75 * 0.5 * 0.5 * 5)


def test_biases_not_penalized():
    g = penalty_grad({"W0": np.ones((2, 1)), "b0": np.ones(1), "gamma0": np.ones(2)}, RegularizationConfig(1.0, 0.5))
    assert set(g) == {"W0"}


def test_cross_entropy_clamps_and_flags():
    value, clamped = cross_entropy(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert clamped and math.isfinite(value)
    assert value == pytest.approx(-math.log(1e-12), rel=1e-6)
    with pytest.raises(ValueError):
        cross_entropy(np.array([0.5]), np.array([0.5]))


# -- backward ----------------------------------------------------------------


def test_linear_mse_closed_form():
    net = Network.create(ModelConfig("linear", "regression", seed=3), 3)
    x, y = np.array([[0.5, -1.0, 2.0]]), np.array([0.7])
    pred, cache = forward(net, x, train=True)
    g = backward(net, cache, 2 * (pred - y))
    np.testing.assert_allclose(g["W0"][:, 0], 2 * (pred[0] - y[0]) * x[0])


def test_l2_gradient_adds_lambda_w():
    net = Network.create(ModelConfig("linear", "regression", seed=3), 3)
    x, y = np.array([[0.5, -1.0, 2.0]]), np.array([0.7])
    pred, cache = forward(net, x, train=True)
    plain = backward(net, cache, 2 * (pred - y))
    reg = backward(net, cache, 2 * (pred - y), reg=RegularizationConfig(0.3, 0.0))
    np.testing.assert_allclose(reg["W0"] - plain["W0"], 0.3 * net.params["W0"])
    np.testing.assert_array_equal(reg["b0"], plain["b0"])


def test_stale_and_missing_cache():
    net = Network.create(ModelConfig("linear", "regression"), 2)
    _, cache = forward(net, np.ones((1, 2)), train=True)
    net.bump()
    with pytest.raises(StaleCacheError):
        backward(net, cache, np.ones(1))
    with pytest.raises(StaleCacheError):
        backward(net, None, np.ones(1))


@pytest.mark.parametrize("arch,act,task,bn,loss_kind", gradcheck.instance_grid())
def test_gradient_matches_finite_differences(arch, act, task, bn, loss_kind):
    rng = np.random.default_rng(zlib.crc32(f"{arch}-{act}-{task}-{bn}-{loss_kind}".encode()))
    for _ in range(2):
        net, X, y = gradcheck.random_instance(rng, arch, act, task, bn)
        assert gradcheck.check(net, X, y, loss_kind, gradcheck.REG) < 1e-5


# -- batch norm --------------------------------------------------------------


def test_batch_norm_hand_example():
    out = batch_norm_forward(np.array([[1.0], [2.0], [3.0]]), BatchNormParams(np.ones(1), np.zeros(1)), eps=0)
    np.testing.assert_allclose(out[:, 0], [-math.sqrt(1.5), 0, math.sqrt(1.5)])
    assert out[2, 0] == pytest.approx(1.2247, abs=1e-4)


def test_batch_norm_identity_and_moments():
    h = np.random.default_rng(9).normal(3, 2, size=(64, 5))
    mu, sigma = h.mean(0), h.std(0)
    normed = batch_norm_forward(h, BatchNormParams(np.ones(5), np.zeros(5)), eps=0)
    assert np.all(np.abs(normed.mean(0)) < 1e-8)
    assert np.all(np.abs(normed.var(0) - 1) < 1e-6)
    np.testing.assert_allclose(batch_norm_forward(h, BatchNormParams(sigma, mu), eps=0), h, atol=1e-12)


def test_batch_norm_constant_and_errors():
    out = batch_norm_forward(np.full((4, 2), 7.0), BatchNormParams(np.array([2.0, 3.0]), np.array([0.5, -1.0])))
    np.testing.assert_allclose(out, np.tile([0.5, -1.0], (4, 1)))
    with pytest.raises(ValueError):
        batch_norm_forward(np.ones((1, 2)), BatchNormParams(np.ones(2), np.zeros(2)))
    with pytest.raises(ValueError):
        BatchNormParams(np.ones(1), np.zeros(1), eps=0)
    with pytest.raises(ValueError):
        batch_norm_forward(np.ones((3, 1)), BatchNormParams(np.ones(1), np.zeros(1)), mode="infer")


def test_batch_norm_infer_uses_running_stats():
    p = BatchNormParams(np.ones(1), np.zeros(1), running_mean=np.array([1.0]), running_var=np.array([4.0]))
    out = batch_norm_forward(np.array([[5.0]]), p, mode="infer", eps=0)
    assert out[0, 0] == 2.0


def test_bn_model_infer_uses_captured_statistics():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 3))
    y = (X[:, 0] > 0).astype(float)
    m = train(ModelConfig("mlp", layer_sizes=(4,), batch_norm=True, seed=1), (X, y), TrainConfig(0.1, 16, 5))
    assert {"bn_mean0", "bn_var0"} <= set(m.state)
    single = np.concatenate([m.predict(X[i : i + 1]) for i in range(5)])
    np.testing.assert_allclose(single, m.predict(X[:5]), atol=1e-14)


# -- training ----------------------------------------------------------------


def blobs(seed=0, n=40):
    rng = np.random.default_rng(seed)
    a = rng.normal([-2, -2], 0.5, size=(n, 2))
    b = rng.normal([2, 2], 0.5, size=(n, 2))
    X = np.vstack([a, b])
    y = np.r_[np.zeros(n), np.ones(n)]
    order = rng.permutation(2 * n)
    return X[order], y[order]


def separable(X, y):
    # exhaustive threshold check along the separating direction (1, 1)
    s = X.sum(axis=1)
    return any(np.all((s > t) == (y == 1)) for t in np.sort(s))


def test_logistic_separates_blobs():
    X, y = blobs()
    assert separable(X, y)
    m = train(ModelConfig("logistic", seed=0), (X, y), TrainConfig(0.5, 8, 200), validation=(X, y))
    assert np.mean((m.predict(X) > 0.5) == y) == 1.0


def linear_xor_optimum():
    # every labeling a half-plane can produce on the four XOR points (all sign patterns of w.x + b)
    best = 0
    for w1 in np.linspace(-1, 1, 21):
        for w2 in np.linspace(-1, 1, 21):
            for b in np.linspace(-1.5, 1.5, 31):
                pred = (XOR_X @ [w1, w2] + b) > 0
                best = max(best, int(np.sum(pred == XOR_Y)))
    return best / 4


def test_xor_logistic_capped_mlp_solves():
    assert linear_xor_optimum() == 0.75
    tc = TrainConfig(learning_rate=0.5, batch_size=4, max_epochs=2000)
    logit = train(ModelConfig("logistic"), (XOR_X, XOR_Y), tc, validation=(XOR_X, XOR_Y))
    assert np.mean((logit.predict(XOR_X) > 0.5) == XOR_Y) <= 0.75
    accs = []
    for seed in range(5):
        mlp = train(ModelConfig("mlp", layer_sizes=(2,), activation="tanh", seed=seed), (XOR_X, XOR_Y),
                    TrainConfig(0.5, 4, 5000), validation=(XOR_X, XOR_Y))
        accs.append(np.mean((mlp.predict(XOR_X) > 0.5) == XOR_Y))
    assert max(accs) == 1.0


def test_patience_zero_stops_at_first_deterioration():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    y = X @ [1.0, -1.0] + rng.normal(scale=2.0, size=60)
    m = train(ModelConfig("mlp", "regression", layer_sizes=(16,), seed=0), (X, y),
              TrainConfig(0.05, 4, 500, loss="mse"), RegularizationConfig(early_stopping_patience=0))
    vals = [h.val_loss for h in m.history]
    first_worse = next(i for i in range(1, len(vals)) if vals[i] >= min(vals[:i]))
    assert m.stopped_epoch == first_worse
    assert len(m.history) == m.stopped_epoch + 1
    assert m.best_epoch == int(np.argmin(vals))


def test_returns_best_validation_epoch_params():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    y = X[:, 0] + rng.normal(scale=1.5, size=50)
    m = train(ModelConfig("mlp", "regression", layer_sizes=(12,), seed=0), (X, y),
              TrainConfig(0.05, 4, 60, loss="mse"), RegularizationConfig(early_stopping_patience=5))
    val_X, val_y = X[-10:], y[-10:]
    assert mse(m.predict(val_X), val_y) == pytest.approx(m.history[m.best_epoch].val_loss, rel=1e-12)


def test_training_deterministic_and_serializable():
    X, y = blobs(3)
    args = (ModelConfig("mlp", layer_sizes=(4,), dropout_p=0.2, seed=7), (X, y),
            TrainConfig(0.1, 8, 15, input_noise=NoiseConfig(0.1, 3)))
    a, b = train(*args), train(*args)
    assert a.history == b.history
    assert dumps_model(a) == dumps_model(b)
    c = loads_model(dumps_model(a))
    for k in a.params:
        assert np.array_equal(a.params[k], c.params[k])
    np.testing.assert_array_equal(a.predict(X), c.predict(X))


def test_gru_training_runs():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 5, 2))
    y = (X[:, -1, 0] > 0).astype(float)
    m = train(ModelConfig("gru", hidden_size=4, seed=0), (X, y), TrainConfig(0.2, 8, 40))
    assert m.history[-1].train_loss < m.history[0].train_loss


def test_divergence_reports_epoch_and_rate():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2)) * 100
    y = X @ [3.0, -2.0]
    with pytest.raises(DivergenceError, match="diverged at epoch") as exc:
        train(ModelConfig("linear", "regression"), (X, y), TrainConfig(10.0, 5, 50, loss="mse"))
    assert exc.value.learning_rate == 10.0


def test_train_errors():
    with pytest.raises(ValueError):
        train(ModelConfig("linear", "regression"), (np.empty((0, 2)), np.empty(0)), TrainConfig(loss="mse"))
    with pytest.raises(ValueError):
        train(ModelConfig("logistic"), (np.ones((4, 1)), np.array([0, 1, 2, 1.0])), TrainConfig())


def test_l1_sparser_than_l2_on_duplicated_features():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(200, 2))
    X = np.column_stack([base[:, 0], base[:, 0], base[:, 1], rng.normal(size=200)])
    y = 2 * base[:, 0]
    tc = TrainConfig(0.05, 20, 300, loss="mse")
    w1 = train(ModelConfig("linear", "regression"), (X, y), tc, RegularizationConfig(0.1, 1.0)).params["W0"][:, 0]
    w2 = train(ModelConfig("linear", "regression"), (X, y), tc, RegularizationConfig(0.1, 0.0)).params["W0"][:, 0]
    assert np.sum(np.abs(w1) < 1e-6) > np.sum(np.abs(w2) < 1e-6)
    ratio = lambda w: max(abs(w[0]), abs(w[1])) / max(min(abs(w[0]), abs(w[1])), 1e-12)  # noqa: E731
    assert ratio(w2) < ratio(w1)


# -- dropout -----------------------------------------------------------------


def test_inverted_dropout_expectation():
    net = Network.create(ModelConfig("mlp", "regression", layer_sizes=(6,), dropout_p=0.3, seed=1), 3)
    x = np.array([[0.4, -0.2, 1.0]])
    infer = forward(net, x)[0][0]
    draws = np.array([forward(net, np.repeat(x, 1000, 0), train=True, step=s)[0] for s in range(100)])
    assert abs(draws.mean() - infer) < 0.01 * abs(infer) + 1e-3


def test_mc_dropout():
    X, y = blobs(2)
    plain = train(ModelConfig("mlp", layer_sizes=(4,), seed=0), (X, y), TrainConfig(0.1, 8, 5))
    mean, std = mc_dropout_predict(plain, X, 10, seed=1)
    np.testing.assert_array_equal(std, 0.0)
    np.testing.assert_array_equal(mean, plain.predict(X))
    drop = train(ModelConfig("mlp", layer_sizes=(4,), dropout_p=0.5, seed=0), (X, y), TrainConfig(0.1, 8, 5))
    _, std1 = mc_dropout_predict(drop, X, 1, seed=0)
    np.testing.assert_array_equal(std1, 0.0)
    a, b = mc_dropout_predict(drop, X, 20, seed=3), mc_dropout_predict(drop, X, 20, seed=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert np.any(a[1] > 0)
    with pytest.raises(ValueError):
        mc_dropout_predict(drop, X, 0)


# -- indicator ---------------------------------------------------------------


def fake_model(task="classification", mean=0.0, std=1.0):
    cfg = ModelConfig("linear", task)
    from drawdown_risk.models.training import EpochRecord

    params = {"W0": np.zeros((1, 1)), "b0": np.zeros(1)}
    return TrainedModel(cfg, 1, params, history=(EpochRecord(0, 0.0, 0.0),), target_mean=mean, target_std=std)


def test_indicator_endpoints_and_monotone():
    m = fake_model()
    np.testing.assert_allclose(indicator_values(m, [1.0, 0.0, 0.5]), [-1, 1, 0])
    p = np.linspace(0, 1, 50)
    assert np.all(np.diff(indicator_values(m, p)) < 0)
    r = fake_model("regression", mean=0.3, std=2.0)
    assert indicator_values(r, [0.3])[0] == 0.0
    assert np.all(np.abs(indicator_values(r, np.linspace(-100, 100, 9))) <= 1)


def test_indicator_from_model_and_untrained():
    m = fake_model("regression")
    s = indicator_from_model(m, np.zeros((3, 1)), dates(3))
    assert s.values.tolist() == [0.0, 0.0, 0.0]
    untrained = TrainedModel(ModelConfig("linear", "regression"), 1, m.params)
    with pytest.raises(NotTrainedError):
        indicator_from_model(untrained, np.zeros((3, 1)), dates(3))


def test_indicator_series_invariants():
    with pytest.raises(ValueError):
        RiskIndicatorSeries(dates(2), np.array([0.0, 1.5]))
    with pytest.raises(ValueError):
        RiskIndicatorSeries(dates(2)[::-1], np.array([0.0, 0.5]))


def test_smoothing():
    s = RiskIndicatorSeries(dates(5), np.array([0.1, -0.4, 0.9, 0.2, -1.0]))
    np.testing.assert_array_equal(smooth_indicator(s, 1).values, s.values)
    const = RiskIndicatorSeries(dates(4), np.full(4, 0.3))
    np.testing.assert_allclose(smooth_indicator(const, 7).values, 0.3)
    step = RiskIndicatorSeries(dates(5), np.array([0.0, 1, 1, 1, 1]))
    want, prev = [0.0], 0.0
    for x in step.values[1:]:
        prev = 0.5 * x + 0.5 * prev
        want.append(prev)
    np.testing.assert_allclose(smooth_indicator(step, 3).values, want)
    assert smooth_indicator(step, 3).values[:3].tolist() == [0.0, 0.5, 0.75]
    with pytest.raises(ValueError):
        smooth_indicator(s, 0)
