"""Forward and backward passes for the linear, logistic, MLP and GRU models.

Parameters live in an ordered ``dict[str, ndarray]``. Names starting with
``W`` or ``U`` are weights (penalized); everything else is a bias or a
batch-norm scale/shift and is never penalized. Row-vector convention
throughout: a layer computes ``h @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import StaleCacheError
from .config import ModelConfig

BN_EPS = 1e-8


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act(name, a):
    if name == "sigmoid":
        return sigmoid(a)
    if name == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _act_grad(name, a, h):
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "tanh":
        return 1.0 - h * h
    return (a > 0).astype(float)


def is_weight(name: str) -> bool:
    return name[0] in "WU"


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, n_inputs: int, rng=None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit batch-norm scale."""
    rng = np.random.default_rng([config.seed, 0]) if rng is None else rng
    p: dict[str, np.ndarray] = {}
    if config.architecture in ("linear", "logistic"):
        p["W0"] = _glorot(rng, n_inputs, 1, (n_inputs, 1))
        p["b0"] = np.zeros(1)
    elif config.architecture == "mlp":
        sizes = [n_inputs, *config.layer_sizes, 1]
        for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
            p[f"W{i}"] = _glorot(rng, fi, fo, (fi, fo))
            p[f"b{i}"] = np.zeros(fo)
            if config.batch_norm and i < len(config.layer_sizes):
                p[f"gamma{i}"] = np.ones(fo)
                p[f"beta{i}"] = np.zeros(fo)
    else:
        H = config.hidden_size
        for g in "zrh":
            p[f"W_{g}"] = _glorot(rng, n_inputs, H, (n_inputs, H))
        for g in "zrh":
            p[f"U_{g}"] = _glorot(rng, H, H, (H, H))
        for g in "zrh":
            p[f"b_{g}"] = np.zeros(H)
        p["W_out"] = _glorot(rng, H, 1, (H, 1))
        p["b_out"] = np.zeros(1)
    return p


@dataclass
class Network:
    """Mutable parameter container used during training and by the raw passes."""

    config: ModelConfig
    n_inputs: int
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    @classmethod
    def create(cls, config: ModelConfig, n_inputs: int) -> "Network":
        return cls(config, n_inputs, init_params(config, n_inputs))

    def bump(self):
        self.version += 1


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = BN_EPS
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


def _bn_core(h, gamma, beta, eps, mean, var):
    inv_std = 1.0 / np.sqrt(var + eps)
    hbn = (h - mean) * inv_std
    return gamma * hbn + beta, hbn, inv_std


def batch_norm_forward(h, params: BatchNormParams, mode: str = "train", eps: Optional[float] = None):
    """Normalize a batch of activations and apply ``gamma * h_bn + beta``.

    ``mode='train'`` uses the batch mean and population variance;
    ``mode='infer'`` uses the running statistics stored in ``params``.
    ``eps`` overrides ``params.eps`` (``eps=0`` is allowed for exact checks).
    """
    h = np.asarray(h, dtype=float)
    eps = params.eps if eps is None else eps
    if mode == "train":
        if h.shape[0] < 2:
            raise ValueError("batch normalization in train mode needs a batch of at least 2")
        mean, var = h.mean(axis=0), h.var(axis=0)
    elif mode == "infer":
        if params.running_mean is None or params.running_var is None:
            raise ValueError("no running statistics captured; train first")
        mean, var = params.running_mean, params.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _bn_core(h, params.gamma, params.beta, eps, mean, var)[0]


def _bn_backward(dout, hbn, inv_std, gamma):
    m = dout.shape[0]
    dgamma = (dout * hbn).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dhbn = dout * gamma
    dh = inv_std / m * (m * dhbn - dhbn.sum(axis=0) - hbn * (dhbn * hbn).sum(axis=0))
    return dh, dgamma, dbeta


def _check_input(net: Network, X):
    X = np.asarray(X, dtype=float)
    expected_ndim = 3 if net.config.architecture == "gru" else 2
    if X.ndim == expected_ndim - 1:
        X = X[None]
    if X.ndim != expected_ndim or X.shape[-1] != net.n_inputs:
        raise ValueError(f"input shape {X.shape} does not match model width {net.n_inputs}")
    if not np.isfinite(X).all():
        raise ValueError("input contains non-finite values")
    return X


def _dropout_mask(rng, shape, p):
    return (rng.random(shape) >= p) / (1.0 - p)


def forward(net: Network, X, train: bool = False, seed: int = 0, step: int = 0, dropout: Optional[bool] = None):
    """Run the model on a batch.

    Returns ``(prediction, cache)``. ``train=True`` uses batch statistics in
    batch-norm layers and, unless ``dropout=False``, inverted dropout seeded by
    ``(seed, step)``. ``dropout=True`` with ``train=False`` is the Monte Carlo
    dropout path (running batch-norm statistics, random masks).
    """
    X = _check_input(net, X)
    use_dropout = (train if dropout is None else dropout) and net.config.dropout_p > 0
    rng = np.random.default_rng([seed, 2, step]) if use_dropout else None
    if net.config.architecture == "gru":
        logit, cache = _gru_batch_forward(net, X, rng)
    else:
        logit, cache = _ff_forward(net, X, train, rng)
    if net.config.task == "classification":
        pred = sigmoid(logit)
    else:
        pred = logit
    cache.update(pred=pred, version=net.version, X=X)
    return pred, cache


def _ff_forward(net, X, train, rng):
    cfg, p = net.config, net.params
    if cfg.architecture in ("linear", "logistic"):
        return (X @ p["W0"] + p["b0"])[:, 0], {"layers": [], "h_out": X}
    layers = []
    h = X
    for i in range(len(cfg.layer_sizes)):
        a = h @ p[f"W{i}"] + p[f"b{i}"]
        layer = {"h_in": h, "a": a}
        if cfg.batch_norm:
            if train:
                mean, var = a.mean(axis=0), a.var(axis=0)
            else:
                mean, var = net.state[f"bn_mean{i}"], net.state[f"bn_var{i}"]
            a_out, hbn, inv_std = _bn_core(a, p[f"gamma{i}"], p[f"beta{i}"], BN_EPS, mean, var)
            layer.update(hbn=hbn, inv_std=inv_std, batch_stats=train)
        else:
            a_out = a
        layer["a_out"] = a_out
        h = _act(cfg.activation, a_out)
        layer["h_act"] = h
        if rng is not None:
            mask = _dropout_mask(rng, h.shape, cfg.dropout_p)
            h = h * mask
            layer["mask"] = mask
        layers.append(layer)
    L = len(cfg.layer_sizes)
    return (h @ p[f"W{L}"] + p[f"b{L}"])[:, 0], {"layers": layers, "h_out": h}


def _gru_step(p, x, h):
    z = sigmoid(x @ p["W_z"] + h @ p["U_z"] + p["b_z"])
    r = sigmoid(x @ p["W_r"] + h @ p["U_r"] + p["b_r"])
    hh = np.tanh(x @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
    return (1.0 - z) * h + z * hh, (z, r, hh)


def _gru_batch_forward(net, X, rng):
    p = net.params
    n, T, _ = X.shape
    h = np.zeros((n, net.config.hidden_size))
    hs, gates = [h], []
    for t in range(T):
        h, g = _gru_step(p, X[:, t, :], h)
        hs.append(h)
        gates.append(g)
    h_last = h
    mask = None
    if rng is not None:
        mask = _dropout_mask(rng, h.shape, net.config.dropout_p)
        h_last = h * mask
    out = (h_last @ p["W_out"] + p["b_out"])[:, 0]
    return out, {"hs": hs, "gates": gates, "mask": mask, "h_out": h_last}


def gru_forward(params: dict, sequence, h0=None):
    """Single-sequence GRU pass.

    ``sequence`` has shape ``(T, n_inputs)``. Returns ``(hidden_states, readout)``
    where ``hidden_states`` is ``(T, hidden)`` holding ``h_1..h_T`` and
    ``readout`` is the linear read-out of ``h_T`` (``None`` if the params carry
    no read-out layer).
    """
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("sequence must be a nonempty (T, n_inputs) array")
    H = params["U_z"].shape[0]
    if seq.shape[1] != params["W_z"].shape[0]:
        raise ValueError(f"sequence width {seq.shape[1]} does not match W_z rows {params['W_z'].shape[0]}")
    h = np.zeros(H) if h0 is None else np.asarray(h0, dtype=float)
    if h.shape != (H,):
        raise ValueError(f"h0 must have shape ({H},)")
    states = []
    for x in seq:
        h, _ = _gru_step(params, x, h)
        states.append(h)
    readout = None
    if "W_out" in params:
        readout = float(h @ params["W_out"][:, 0] + params["b_out"][0])
    return np.array(states), readout


def backward(net: Network, cache, grad, wrt: str = "output", reg=None) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient of the loss w.r.t. the batch output.

    ``wrt='logit'`` passes a gradient taken w.r.t. the pre-sigmoid value of a
    classification head (the numerically stable route for cross-entropy).
    When ``reg`` is given its penalty gradient is added to every weight.
    """
    if cache is None or "pred" not in cache:
        raise StaleCacheError("missing forward cache; call forward(train=True) first")
    if cache["version"] != net.version:
        raise StaleCacheError("forward cache is stale: parameters changed since it was computed")
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if wrt == "output" and net.config.task == "classification":
        pred = cache["pred"]
        dlogit = grad * pred * (1.0 - pred)
    elif wrt in ("output", "logit"):
        dlogit = grad
    else:
        raise ValueError(f"unknown wrt {wrt!r}")

    if net.config.architecture == "gru":
        grads = _gru_backward(net, cache, dlogit)
    else:
        grads = _ff_backward(net, cache, dlogit)
    if reg is not None:
        from .losses import penalty_grad

        for k, g in penalty_grad(net.params, reg).items():
            grads[k] = grads[k] + g
    return grads


def _ff_backward(net, cache, dlogit):
    cfg, p = net.config, net.params
    grads = {}
    d = dlogit[:, None]
    L = len(cache["layers"]) if cfg.architecture == "mlp" else 0
    h_out = cache["h_out"]
    grads[f"W{L}"] = h_out.T @ d
    grads[f"b{L}"] = d.sum(axis=0)
    dh = d @ p[f"W{L}"].T
    for i in reversed(range(L)):
        layer = cache["layers"][i]
        if "mask" in layer:
            dh = dh * layer["mask"]
        da = dh * _act_grad(cfg.activation, layer["a_out"], layer["h_act"])
        if cfg.batch_norm:
            if layer["batch_stats"]:
                da, grads[f"gamma{i}"], grads[f"beta{i}"] = _bn_backward(
                    da, layer["hbn"], layer["inv_std"], p[f"gamma{i}"]
                )
            else:
                grads[f"gamma{i}"] = (da * layer["hbn"]).sum(axis=0)
                grads[f"beta{i}"] = da.sum(axis=0)
                da = da * p[f"gamma{i}"] * layer["inv_std"]
        grads[f"W{i}"] = layer["h_in"].T @ da
        grads[f"b{i}"] = da.sum(axis=0)
        dh = da @ p[f"W{i}"].T
    return {k: grads[k] for k in p}


def _gru_backward(net, cache, dlogit):
    p = net.params
    X = cache["X"]
    hs, gates = cache["hs"], cache["gates"]
    g = {k: np.zeros_like(v) for k, v in p.items()}
    d = dlogit[:, None]
    g["W_out"] = cache["h_out"].T @ d
    g["b_out"] = d.sum(axis=0)
    dh = d @ p["W_out"].T
    if cache["mask"] is not None:
        dh = dh * cache["mask"]
    for t in reversed(range(X.shape[1])):
        x, h_prev = X[:, t, :], hs[t]
        z, r, hh = gates[t]
        dz = dh * (hh - h_prev)
        dh_prev = dh * (1.0 - z)
        da_h = dh * z * (1.0 - hh * hh)
        g["W_h"] += x.T @ da_h
        g["U_h"] += (r * h_prev).T @ da_h
        g["b_h"] += da_h.sum(axis=0)
        drh = da_h @ p["U_h"].T
        dh_prev += drh * r
        da_r = drh * h_prev * r * (1.0 - r)
        g["W_r"] += x.T @ da_r
        g["U_r"] += h_prev.T @ da_r
        g["b_r"] += da_r.sum(axis=0)
        dh_prev += da_r @ p["U_r"].T
        da_z = dz * z * (1.0 - z)
        g["W_z"] += x.T @ da_z
        g["U_z"] += h_prev.T @ da_z
        g["b_z"] += da_z.sum(axis=0)
        dh_prev += da_z @ p["U_z"].T
        dh = dh_prev
    return g


def capture_bn_statistics(net: Network, X) -> None:
    """Store per-layer population statistics over ``X`` as the infer-mode batch-norm state."""
    if not net.config.batch_norm:
        return
    X = _check_input(net, X)
    p, cfg = net.params, net.config
    h = X
    for i in range(len(cfg.layer_sizes)):
        a = h @ p[f"W{i}"] + p[f"b{i}"]
        mean, var = a.mean(axis=0), a.var(axis=0)
        net.state[f"bn_mean{i}"] = mean
        net.state[f"bn_var{i}"] = var
        h = _act(cfg.activation, _bn_core(a, p[f"gamma{i}"], p[f"beta{i}"], BN_EPS, mean, var)[0])
