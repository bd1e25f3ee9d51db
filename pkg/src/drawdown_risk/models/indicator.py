"""Mapping model outputs onto a bounded risk indicator."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .training import TrainedModel, require_trained


@dataclass(frozen=True)
class RiskIndicatorSeries:
    """Dated indicator values in [-1, +1]; -1 means a severe drawdown is near certain."""

    dates: tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        dates = tuple(self.dates)
        if values.shape != (len(dates),):
            raise ValueError("one value per date required")
        if np.any(~np.isfinite(values)) or np.any(np.abs(values) > 1):
            raise ValueError("indicator values must be finite and within [-1, 1]")
        if any(not a < b for a, b in zip(dates, dates[1:])):
            raise ValueError("indicator dates must be strictly increasing")
        values.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.dates)


def indicator_values(model: TrainedModel, prediction) -> np.ndarray:
    prediction = np.asarray(prediction, dtype=float)
    if model.config.task == "classification":
        return np.clip(1.0 - 2.0 * prediction, -1.0, 1.0)
    return np.clip(np.tanh((prediction - model.target_mean) / model.target_std), -1.0, 1.0)


def indicator_from_model(model: TrainedModel, features, dates) -> RiskIndicatorSeries:
    """``1 - 2 P(drawdown)`` for classifiers, ``tanh`` of the standardized output for regressors.

    Regression outputs are standardized with the training-target mean and std.
    """
    require_trained(model)
    return RiskIndicatorSeries(tuple(dates), indicator_values(model, model.predict(features)))


def smooth_indicator(series: RiskIndicatorSeries, ema_span: int) -> RiskIndicatorSeries:
    """Exponential moving average with ``alpha = 2 / (span + 1)``, seeded with the first value."""
    if ema_span < 1:
        raise ValueError("ema_span must be >= 1")
    x = series.values
    if ema_span == 1 or len(x) == 0:
        return RiskIndicatorSeries(series.dates, x.copy())
    alpha = 2.0 / (ema_span + 1)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, len(x)):
        out[t] = alpha * x[t] + (1 - alpha) * out[t - 1]
    return RiskIndicatorSeries(series.dates, np.clip(out, -1.0, 1.0))
