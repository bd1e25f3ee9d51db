"""Mini-batch SGD training, Monte Carlo dropout and model serialization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DivergenceError, NotTrainedError
from ..preprocess import NoiseConfig, add_input_noise
from .config import ModelConfig, RegularizationConfig, TrainConfig
from .losses import data_loss, data_loss_grad, penalty
from .network import Network, backward, capture_bn_statistics, forward, is_weight

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
GRU_CLIP_NORM = 5.0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    clamped: bool = False


@dataclass(frozen=True)
class TrainedModel:
    config: ModelConfig
    n_inputs: int
    params: dict
    state: dict = field(default_factory=dict)
    history: tuple = ()
    stopped_epoch: int = 0
    best_epoch: int = 0
    target_mean: float = 0.0
    target_std: float = 1.0
    loss: str = "mse"

    def __post_init__(self):
        if self.history and len(self.history) != self.stopped_epoch + 1:
            raise ValueError("history length must equal stopped_epoch + 1")

    def network(self) -> Network:
        return Network(self.config, self.n_inputs, self.params, dict(self.state))

    def predict(self, X) -> np.ndarray:
        return forward(self.network(), X)[0]

    def __call__(self, X):
        return self.predict(X)


def _batches(order, batch_size, min_size):
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < min_size:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def loss_and_grad(net: Network, X, y, loss_kind: str, reg=None, seed: int = 0, step: int = 0, dropout=None):
    """Regularized loss and its exact gradient on one batch (train-mode forward)."""
    pred, cache = forward(net, X, train=True, seed=seed, step=step, dropout=dropout)
    value, _ = data_loss(pred, y, loss_kind)
    if loss_kind == "cross_entropy" and net.config.task == "classification":
        grads = backward(net, cache, (pred - np.asarray(y, dtype=float)) / pred.size, wrt="logit", reg=reg)
    else:
        grads = backward(net, cache, data_loss_grad(pred, y, loss_kind), reg=reg)
    return value + penalty(net.params, reg), grads


def _evaluate(net, X, y, kind):
    pred = forward(net, X)[0]
    return data_loss(pred, y, kind)


def _clip(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


def _snapshot(net):
    return {k: v.copy() for k, v in net.params.items()}, {k: v.copy() for k, v in net.state.items()}


def train(
    model_config: ModelConfig,
    dataset,
    train_config: TrainConfig,
    reg_config: Optional[RegularizationConfig] = None,
    validation=None,
) -> TrainedModel:
    """Fit a model with mini-batch SGD and early stopping.

    ``dataset`` is ``(X, y)`` in temporal order. Unless ``validation`` is given
    explicitly, the last ``validation_fraction`` of rows is held out (never
    shuffled into training). The L1 part of the penalty is applied as a
    soft-threshold (proximal) step after each gradient step so weights can
    reach exactly zero. Returns the parameters of the best validation epoch.
    """
    reg = reg_config or RegularizationConfig()
    X, y = dataset
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature rows but {len(y)} targets")
    if model_config.task == "classification" and np.any((y != 0) & (y != 1)):
        raise ValueError("classification targets must be 0/1")

    if validation is None:
        n_val = max(1, int(round(len(y) * train_config.validation_fraction)))
        if n_val >= len(y):
            raise ValueError("validation split leaves no training rows")
        X_tr, y_tr = X[:-n_val], y[:-n_val]
        X_val, y_val = X[-n_val:], y[-n_val:]
    else:
        X_tr, y_tr = X, y
        X_val, y_val = (np.asarray(validation[0], dtype=float), np.asarray(validation[1], dtype=float).reshape(-1))

    net = Network.create(model_config, X.shape[-1])
    kind = train_config.loss
    lr = train_config.learning_rate
    clip = train_config.grad_clip_norm
    if clip is None and model_config.architecture == "gru":
        clip = GRU_CLIP_NORM
    l1 = reg.l1_ratio * reg.lam
    smooth_reg = RegularizationConfig(lam=(1 - reg.l1_ratio) * reg.lam, l1_ratio=0.0)
    shuffle_rng = np.random.default_rng([model_config.seed, 1])
    min_batch = 2 if model_config.batch_norm else 1
    if model_config.batch_norm and len(y_tr) < 2:
        raise ValueError("batch normalization needs at least 2 training rows")

    history = []
    best = (np.inf, -1, None)
    since_best = 0
    step = 0
    for epoch in range(train_config.max_epochs):
        X_epoch = X_tr
        if train_config.input_noise is not None and train_config.input_noise.sigma > 0:
            noise = train_config.input_noise
            X_epoch = add_input_noise(X_tr, NoiseConfig(noise.sigma, noise.seed + epoch))
        with np.errstate(over="ignore", invalid="ignore"):
            for idx in _batches(shuffle_rng.permutation(len(y_tr)), train_config.batch_size, min_batch):
                _, grads = loss_and_grad(
                    net, X_epoch[idx], y_tr[idx], kind, smooth_reg, seed=model_config.seed, step=step
                )
                step += 1
                if clip is not None:
                    grads = _clip(grads, clip)
                for k, g in grads.items():
                    w = net.params[k] - lr * g
                    if l1 > 0 and is_weight(k):
                        w = np.sign(w) * np.maximum(np.abs(w) - lr * l1, 0.0)
                    net.params[k] = w
                net.bump()
        with np.errstate(all="ignore"):
            capture_bn_statistics(net, X_tr)
            finite = all(np.isfinite(v).all() for v in net.params.values())
            tr_loss, clamped = _evaluate(net, X_tr, y_tr, kind) if finite else (np.nan, False)
            val_loss, _ = _evaluate(net, X_val, y_val, kind) if finite else (np.nan, False)
        tr_total = tr_loss + penalty(net.params, reg) if finite else np.nan
        if not (np.isfinite(tr_total) and np.isfinite(val_loss)):
            raise DivergenceError(epoch, lr)
        history.append(EpochRecord(epoch, float(tr_total), float(val_loss), clamped))
        if val_loss < best[0]:
            best = (val_loss, epoch, _snapshot(net))
            since_best = 0
        else:
            since_best += 1
            patience = reg.early_stopping_patience
            if patience is not None and since_best > patience:
                log.debug("early stop at epoch %d (best %d)", epoch, best[1])
                break

    params, state = best[2]
    return TrainedModel(
        config=model_config,
        n_inputs=X.shape[-1],
        params=params,
        state=state,
        history=tuple(history),
        stopped_epoch=len(history) - 1,
        best_epoch=best[1],
        target_mean=float(y_tr.mean()),
        target_std=float(y_tr.std()) if y_tr.std() > 0 else 1.0,
        loss=kind,
    )


def mc_dropout_predict(model: TrainedModel, X, n_samples: int, seed: int = 0):
    """Mean and population std of ``n_samples`` dropout-active predictions."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    net = model.network()
    if model.config.dropout_p == 0 or n_samples == 1:
        # a single or non-random draw has zero spread by definition
        pred = forward(net, X, train=False, seed=seed, step=0, dropout=True)[0]
        return pred, np.zeros_like(pred)
    draws = np.stack([forward(net, X, train=False, seed=seed, step=i, dropout=True)[0] for i in range(n_samples)])
    return draws.mean(axis=0), draws.std(axis=0)


def _history_dict(h: EpochRecord):
    return {"epoch": h.epoch, "train_loss": h.train_loss, "val_loss": h.val_loss, "clamped": h.clamped}


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": "drawdown_risk.TrainedModel",
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "n_inputs": model.n_inputs,
        "loss": model.loss,
        "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in model.params.items()},
        "state": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in model.state.items()},
        "history": [_history_dict(h) for h in model.history],
        "stopped_epoch": model.stopped_epoch,
        "best_epoch": model.best_epoch,
        "target_mean": model.target_mean,
        "target_std": model.target_std,
    }


def model_from_dict(d: dict) -> TrainedModel:
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')!r}")

    def arrays(section):
        return {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in section.items()}

    return TrainedModel(
        config=ModelConfig.from_dict(d["config"]),
        n_inputs=d["n_inputs"],
        params=arrays(d["params"]),
        state=arrays(d["state"]),
        history=tuple(EpochRecord(**h) for h in d["history"]),
        stopped_epoch=d["stopped_epoch"],
        best_epoch=d["best_epoch"],
        target_mean=d["target_mean"],
        target_std=d["target_std"],
        loss=d["loss"],
    )


def dumps_model(model: TrainedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1)


def loads_model(text: str) -> TrainedModel:
    return model_from_dict(json.loads(text))


def require_trained(model):
    if not isinstance(model, TrainedModel) or not model.history:
        raise NotTrainedError("model has not been trained")
    return model
