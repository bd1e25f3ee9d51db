"""Data losses and the elastic-net penalty."""

from __future__ import annotations

import numpy as np

from .config import RegularizationConfig
from .network import is_weight

CE_CLAMP = 1e-12


def cross_entropy(pred, target):
    """Mean log loss; returns ``(value, clamped)`` where ``clamped`` flags predictions at 0 or 1."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if np.any((pred < 0) | (pred > 1)):
        raise ValueError("cross-entropy predictions must lie in [0, 1]")
    if np.any((target != 0) & (target != 1)):
        raise ValueError("cross-entropy targets must be 0 or 1")
    clamped = bool(np.any((pred < CE_CLAMP) | (pred > 1 - CE_CLAMP)))
    p = np.clip(pred, CE_CLAMP, 1 - CE_CLAMP)
    value = -np.mean(target * np.log(p) + (1 - target) * np.log1p(-p))
    return float(value), clamped


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def data_loss(pred, target, kind: str):
    if kind == "cross_entropy":
        return cross_entropy(pred, target)
    if kind == "mse":
        return mse(pred, target), False
    raise ValueError(f"unknown loss kind {kind!r}")


def data_loss_grad(pred, target, kind: str):
    """Gradient of the mean data loss w.r.t. each prediction."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    n = pred.size
    if kind == "mse":
        return 2.0 * (pred - target) / n
    p = np.clip(pred, CE_CLAMP, 1 - CE_CLAMP)
    return (p - target) / (p * (1 - p)) / n


def penalty(params: dict, reg: RegularizationConfig | None) -> float:
    if reg is None or reg.lam == 0:
        return 0.0
    l1 = sum(float(np.abs(v).sum()) for k, v in params.items() if is_weight(k))
    l2 = sum(float((v * v).sum()) for k, v in params.items() if is_weight(k))
    return reg.l1_ratio * reg.lam * l1 + (1 - reg.l1_ratio) * reg.lam * 0.5 * l2


def penalty_grad(params: dict, reg: RegularizationConfig | None) -> dict:
    """Gradient (subgradient 0 at w=0 for the L1 part) of :func:`penalty`."""
    if reg is None or reg.lam == 0:
        return {}
    r, lam = reg.l1_ratio, reg.lam
    return {k: r * lam * np.sign(v) + (1 - r) * lam * v for k, v in params.items() if is_weight(k)}


def loss(prediction, target, kind: str, reg: RegularizationConfig | None = None, params: dict | None = None) -> float:
    value, _ = data_loss(prediction, target, kind)
    return value + penalty(params or {}, reg)
