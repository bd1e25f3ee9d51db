"""Model-agnostic explanations: permutation importance and partial dependence."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateDataError, DegenerateFeatureError
from .models.losses import cross_entropy, mse

LOSSES = {
    "mse": mse,
    "cross_entropy": lambda p, y: cross_entropy(np.clip(p, 0, 1), y)[0],
}


def _predictor(model) -> Callable:
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError("model must be callable or expose predict()")


def _names(n, feature_names):
    names = [f"x{i}" for i in range(n)] if feature_names is None else list(feature_names)
    if len(names) != n:
        raise ValueError(f"{len(names)} feature names for {n} columns")
    return names


@dataclass(frozen=True)
class FeatureImportance:
    name: str
    baseline_metric: float
    permuted_metric: float
    importance: float
    std: float


@dataclass(frozen=True)
class ImportanceReport:
    features: tuple[FeatureImportance, ...]
    n_repeats: int
    seed: int
    metric: str

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "n_repeats": self.n_repeats,
            "seed": self.seed,
            "features": [f.__dict__ for f in self.features],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "baseline_metric", "permuted_metric", "importance", "std"])
            for f in self.features:
                w.writerow([f.name, repr(f.baseline_metric), repr(f.permuted_metric), repr(f.importance), repr(f.std)])


def permutation_importance(
    model, features, targets, metric: str = "mse", n_repeats: int = 5, seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> ImportanceReport:
    """Increase in a loss metric after shuffling each feature column.

    Works on 2-D feature matrices and on 3-D sequence batches, where the last
    axis holds the features and whole samples are permuted per feature.
    The input array is never modified.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if metric not in LOSSES:
        raise ValueError(f"metric must be a loss, one of {sorted(LOSSES)}")
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.shape[0] < 2:
        raise DegenerateDataError("permutation importance needs at least 2 rows")
    predict, loss = _predictor(model), LOSSES[metric]
    baseline = float(loss(predict(X), y))
    rng = np.random.default_rng(seed)
    names = _names(X.shape[-1], feature_names)
    out = []
    for j, name in enumerate(names):
        scores = []
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[..., j] = X[rng.permutation(X.shape[0])][..., j]
            scores.append(float(loss(predict(Xp), y)))
        mean = float(np.mean(scores))
        out.append(FeatureImportance(name, baseline, mean, mean - baseline, float(np.std(scores))))
    return ImportanceReport(tuple(out), n_repeats, seed, metric)


@dataclass(frozen=True)
class PdpCurve:
    feature: str
    grid: np.ndarray
    averaged_predictions: np.ndarray

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "grid": [float(g) for g in self.grid],
            "averaged_predictions": [float(p) for p in self.averaged_predictions],
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "grid_value", "average_prediction"])
            for g, p in zip(self.grid, self.averaged_predictions):
                w.writerow([self.feature, repr(float(g)), repr(float(p))])


def partial_dependence(model, features, feature, grid_size: int = 20, feature_names=None) -> PdpCurve:
    """Average prediction with one feature pinned to each point of an even grid over its observed range."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    X = np.asarray(features, dtype=float)
    names = _names(X.shape[-1], feature_names)
    j = names.index(feature) if isinstance(feature, str) else int(feature)
    col = X[..., j]
    lo, hi = float(col.min()), float(col.max())
    if not hi > lo:
        raise DegenerateFeatureError(names[j], "constant feature has no range")
    predict = _predictor(model)
    grid = np.linspace(lo, hi, grid_size)
    avg = np.empty(grid_size)
    for i, g in enumerate(grid):
        Xg = X.copy()
        Xg[..., j] = g
        avg[i] = float(np.mean(predict(Xg)))
    return PdpCurve(names[j], grid, avg)
