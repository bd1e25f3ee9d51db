"""Drawdown risk indicators: labeling, from-scratch neural models, walk-forward tuning and backtesting."""

from .errors import (
    ConfigError,
    DegenerateDataError,
    DegenerateFeatureError,
    DivergenceError,
    DomainError,
    DuplicateDateError,
    NotTrainedError,
    ParseError,
    StaleCacheError,
)
from .labeling import DrawdownEpisode, TargetSpec, detect_drawdowns, label_classification, label_regression
from .timeseries import AlignmentPolicy, TimeSeriesFrame, align, ingest_csv, pct_change

__version__ = "0.1.0"

__all__ = [
    "AlignmentPolicy",
    "ConfigError",
    "DegenerateDataError",
    "DegenerateFeatureError",
    "DivergenceError",
    "DomainError",
    "DrawdownEpisode",
    "DuplicateDateError",
    "NotTrainedError",
    "ParseError",
    "StaleCacheError",
    "TargetSpec",
    "TimeSeriesFrame",
    "align",
    "detect_drawdowns",
    "ingest_csv",
    "label_classification",
    "label_regression",
    "pct_change",
]
