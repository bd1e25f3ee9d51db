"""Feature scaling, PCA, input noise and sequence windowing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateFeatureError

SCALER_KINDS = ("unit", "minmax", "robust", "zscore")


@dataclass(frozen=True)
class ScalerParams:
    kind: str
    a: float = 0.0
    b: float = 1.0
    min: Optional[np.ndarray] = None
    max: Optional[np.ndarray] = None
    median: Optional[np.ndarray] = None
    iqr: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        for v in (self.min, self.median, self.mean):
            if v is not None:
                return len(v)
        raise ValueError("scaler has no statistics")

    def _offset_scale(self):
        """Return (offset, scale, a) so that ``apply`` is ``a + (x - offset) / scale``."""
        if self.kind == "unit":
            return self.min, self.max - self.min, 0.0
        if self.kind == "minmax":
            return self.min, (self.max - self.min) / (self.b - self.a), self.a
        if self.kind == "robust":
            return self.median, self.iqr, 0.0
        return self.mean, self.std, 0.0

    def to_dict(self) -> dict:
        d = {"type": "ScalerParams", "kind": self.kind}
        if self.kind == "minmax":
            d.update(a=self.a, b=self.b)
        for key in ("min", "max", "median", "iqr", "mean", "std"):
            v = getattr(self, key)
            if v is not None:
                d[key] = [float(x) for x in v]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        kw = {k: np.array(d[k], dtype=float) for k in ("min", "max", "median", "iqr", "mean", "std") if k in d}
        return cls(kind=d["kind"], a=d.get("a", 0.0), b=d.get("b", 1.0), **kw)


def quartiles(column) -> tuple[float, float, float]:
    """Q1, median, Q3 with the exclusive linear-interpolation rule (position ``(n + 1) p``)."""
    x = np.sort(np.asarray(column, dtype=float))
    n = x.size
    out = []
    for p in (0.25, 0.5, 0.75):
        pos = (n + 1) * p  # 1-based
        j = int(np.floor(pos))
        if j < 1:
            out.append(x[0])
        elif j >= n:
            out.append(x[-1])
        else:
            out.append(x[j - 1] + (pos - j) * (x[j] - x[j - 1]))
    return tuple(float(v) for v in out)


def _names(n, feature_names):
    return list(feature_names) if feature_names is not None else [str(i) for i in range(n)]


def fit_scaler(data, kind: str, a: float = 0.0, b: float = 1.0, feature_names=None) -> ScalerParams:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if kind not in SCALER_KINDS:
        raise ValueError(f"unknown scaler kind {kind!r}")
    if data.shape[0] < 2:
        raise ValueError("fit_scaler needs at least 2 rows")
    names = _names(data.shape[1], feature_names)

    if kind in ("unit", "minmax"):
        if kind == "minmax" and not b > a:
            raise ValueError("minmax requires b > a")
        lo, hi = data.min(axis=0), data.max(axis=0)
        for j in np.flatnonzero(hi <= lo):
            raise DegenerateFeatureError(names[j], "max equals min")
        if kind == "unit":
            return ScalerParams(kind, min=lo, max=hi)
        return ScalerParams(kind, a=float(a), b=float(b), min=lo, max=hi)
    if kind == "robust":
        q = np.array([quartiles(data[:, j]) for j in range(data.shape[1])])
        iqr = q[:, 2] - q[:, 0]
        for j in np.flatnonzero(iqr <= 0):
            raise DegenerateFeatureError(names[j], "zero interquartile range")
        return ScalerParams(kind, median=q[:, 1], iqr=iqr)
    mean = data.mean(axis=0)
    std = data.std(axis=0)  # population
    for j in np.flatnonzero(std <= 0):
        raise DegenerateFeatureError(names[j], "zero standard deviation")
    return ScalerParams(kind, mean=mean, std=std)


def _check_width(params, data):
    data = np.asarray(data, dtype=float)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[:, None]
    if data.shape[1] != params.n_features:
        raise ValueError(f"data has {data.shape[1]} features, scaler expects {params.n_features}")
    return data, squeeze


def apply_scaler(params: ScalerParams, data) -> np.ndarray:
    data, squeeze = _check_width(params, data)
    offset, scale, a = params._offset_scale()
    out = a + (data - offset) / scale
    return out[:, 0] if squeeze else out


def invert_scaler(params: ScalerParams, data) -> np.ndarray:
    data, squeeze = _check_width(params, data)
    offset, scale, a = params._offset_scale()
    out = offset + (data - a) * scale
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # (n_components, n_features), orthonormal rows
    feature_means: np.ndarray
    explained_variance: np.ndarray
    total_variance: float = 1.0

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        return self.explained_variance / self.total_variance

    def to_dict(self) -> dict:
        return {
            "type": "PcaModel",
            "components": [[float(x) for x in row] for row in self.components],
            "feature_means": [float(x) for x in self.feature_means],
            "explained_variance": [float(x) for x in self.explained_variance],
            "total_variance": float(self.total_variance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            components=np.array(d["components"], dtype=float),
            feature_means=np.array(d["feature_means"], dtype=float),
            explained_variance=np.array(d["explained_variance"], dtype=float),
            total_variance=float(d["total_variance"]),
        )


def fit_pca(data, n_components: int) -> PcaModel:
    """Principal axes from the eigendecomposition of the sample covariance.

    Each component is sign-normalized so its largest-magnitude entry is positive.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if not 1 <= n_components <= min(n - 1, p):
        raise ValueError(f"n_components must be in [1, {min(n - 1, p)}], got {n_components}")
    means = data.mean(axis=0)
    centered = data - means
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    for row in evecs:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return PcaModel(
        components=evecs[:n_components].copy(),
        feature_means=means,
        explained_variance=evals[:n_components].copy(),
        total_variance=float(evals.sum()),
    )


def pca_transform(model: PcaModel, data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.shape[-1] != model.feature_means.size:
        raise ValueError("feature count does not match the PCA model")
    return (data - model.feature_means) @ model.components.T


def pca_inverse(model: PcaModel, scores) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.feature_means


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def add_input_noise(data, config: NoiseConfig) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if config.sigma == 0:
        return data.copy()
    rng = np.random.default_rng(config.seed)
    return data + rng.normal(0.0, config.sigma, size=data.shape)


def window(features, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping windows ``features[i:i+length]``.

    Returns ``(samples, target_index)`` where ``samples`` has shape
    ``(rows - length + 1, length, n_features)`` and ``target_index[i]`` is the
    row index of the last row in sample ``i``.
    """
    features = np.asarray(features)
    if features.ndim == 1:
        features = features[:, None]
    rows = features.shape[0]
    if length < 1:
        raise ValueError("window length must be >= 1")
    if rows < length:
        raise ValueError(f"need at least {length} rows, got {rows}")
    count = rows - length + 1
    idx = np.arange(count)[:, None] + np.arange(length)[None, :]
    return features[idx], np.arange(length - 1, rows)
