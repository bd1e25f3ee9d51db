"""Drawdown episodes and supervised targets built from a price series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

REGRESSION_KINDS = ("drawdown_magnitude", "return_to_reversal", "trend_total_return", "bear_drawdown")


@dataclass(frozen=True)
class DrawdownEpisode:
    peak_index: int
    trough_index: int
    depth: float

    def __post_init__(self):
        if not self.peak_index < self.trough_index:
            raise ValueError("peak_index must precede trough_index")
        if self.depth > 0:
            raise ValueError("depth must be <= 0")


@dataclass(frozen=True)
class TargetSpec:
    """Labeling recipe.

    Exactly one of ``top_k`` / ``threshold`` selects the qualifying episodes;
    ``threshold`` is a positive fraction (0.05 means drops of 5% or more).
    """

    task: str = "classification"
    top_k: Optional[int] = None
    threshold: Optional[float] = None
    regression_kind: str = "drawdown_magnitude"
    horizon: Optional[int] = None
    lead: int = 2

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if (self.top_k is None) == (self.threshold is None):
            raise ValueError("set exactly one of top_k or threshold")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.regression_kind not in REGRESSION_KINDS:
            raise ValueError(f"unknown regression_kind {self.regression_kind!r}")
        if self.lead < 1:
            raise ValueError("lead must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def mode(self) -> str:
        return "top_k" if self.top_k is not None else "threshold"


def _check_prices(prices):
    prices = np.asarray(prices, dtype=float)
    if prices.ndim != 1 or prices.size < 2:
        raise ValueError("need a 1-D price series with at least 2 values")
    bad = np.flatnonzero(~(prices > 0))
    if bad.size:
        raise DomainError(f"price at index {int(bad[0])} is not positive: {prices[bad[0]]!r}")
    return prices


def detect_drawdowns(prices) -> list[DrawdownEpisode]:
    """Split the series into running-peak-to-minimum declines.

    An episode opens at the running maximum and closes once the price strictly
    exceeds that maximum (or the series ends); its trough is the earliest
    minimum in between.
    """
    prices = _check_prices(prices)
    episodes = []
    peak = 0
    trough = None
    for t in range(1, prices.size):
        p = prices[t]
        if p > prices[peak]:
            if trough is not None:
                episodes.append(DrawdownEpisode(peak, trough, prices[trough] / prices[peak] - 1.0))
            peak, trough = t, None
        elif p < prices[peak] and (trough is None or p < prices[trough]):
            trough = t
    if trough is not None:
        episodes.append(DrawdownEpisode(peak, trough, prices[trough] / prices[peak] - 1.0))
    return episodes


def select_episodes(episodes, spec: TargetSpec) -> list[DrawdownEpisode]:
    """Qualifying episodes in peak order (top-k ties go to the earlier peak)."""
    if spec.top_k is not None:
        if spec.top_k > len(episodes):
            raise ValueError(f"top_k={spec.top_k} exceeds the {len(episodes)} detected episodes")
        ranked = sorted(episodes, key=lambda e: (e.depth, e.peak_index))
        chosen = ranked[: spec.top_k]
    else:
        chosen = [e for e in episodes if -e.depth >= spec.threshold]
    return sorted(chosen, key=lambda e: e.peak_index)


def label_classification(prices, spec: TargetSpec) -> np.ndarray:
    """1 on days strictly after a qualifying peak up to and including its trough.

    Days still at the peak price (a plateau before the decline) stay 0.
    """
    if spec.task != "classification":
        raise ValueError("spec.task must be 'classification'")
    prices = _check_prices(prices)
    labels = np.zeros(prices.size, dtype=int)
    episodes = detect_drawdowns(prices)
    if not episodes and spec.top_k is not None:
        return labels
    for e in select_episodes(episodes, spec):
        end = e.trough_index
        if spec.horizon is not None:
            end = min(end, e.peak_index + spec.horizon)
        seg = slice(e.peak_index + 1, end + 1)
        labels[seg] = prices[seg] < prices[e.peak_index]
    return labels


def _segments(n, episodes):
    """Alternating (kind, start, end) segments, inclusive bounds; bear = [peak, trough]."""
    segs = []
    cursor = 0
    for e in episodes:
        if e.peak_index > cursor:
            segs.append(("bull", cursor, e.peak_index - 1))
        segs.append(("bear", e.peak_index, e.trough_index))
        cursor = e.trough_index + 1
    if cursor < n:
        segs.append(("bull", cursor, n - 1))
    return segs


def label_regression(prices, spec: TargetSpec) -> np.ndarray:
    """Real-valued trend targets.

    Bear segments run from a qualifying peak to its trough (inclusive); every
    other day belongs to a bull segment ending at the next qualifying peak or
    at the last observation.
    """
    if spec.task != "regression":
        raise ValueError("spec.task must be 'regression'")
    kind = spec.regression_kind
    if kind not in REGRESSION_KINDS:
        raise ValueError(f"unknown regression kind {kind!r}")
    prices = _check_prices(prices)
    n = prices.size
    episodes = detect_drawdowns(prices)
    if episodes or spec.top_k is None:
        episodes = select_episodes(episodes, spec)
    out = np.zeros(n)

    for seg_kind, start, end in _segments(n, episodes):
        idx = np.arange(start, end + 1)
        if seg_kind == "bear":
            trough_price = prices[end]
            depth = trough_price / prices[start] - 1.0
            if kind in ("drawdown_magnitude", "return_to_reversal"):
                out[idx] = trough_price / prices[idx] - 1.0
            else:
                out[idx] = depth
        else:
            # a bull segment reverses at the next peak, i.e. the day after it ends
            reversal = min(end + 1, n - 1)
            if kind == "return_to_reversal":
                out[idx] = prices[reversal] / prices[idx] - 1.0
            elif kind == "trend_total_return":
                base = prices[start - 1] if start > 0 else prices[start]
                out[idx] = prices[reversal] / base - 1.0
            # drawdown_magnitude and bear_drawdown stay 0 in bull segments
    return out


@dataclass(frozen=True)
class PairedDataset:
    """Rows ``x(t)`` paired with ``y(t + lead)``; index arrays refer to the source rows."""

    features: np.ndarray
    targets: np.ndarray
    feature_index: np.ndarray
    target_index: np.ndarray
    lead: int

    def __len__(self):
        return len(self.targets)


def shift_for_actionability(features, targets, lead: int = 2) -> PairedDataset:
    features = np.asarray(features)
    targets = np.asarray(targets)
    if lead < 1:
        raise ValueError("lead must be >= 1")
    n = len(targets)
    if len(features) != n:
        raise ValueError(f"features have {len(features)} rows, targets {n}")
    if n <= lead:
        raise ValueError(f"need more than lead={lead} rows, got {n}")
    return PairedDataset(
        features=features[: n - lead],
        targets=targets[lead:],
        feature_index=np.arange(0, n - lead),
        target_index=np.arange(lead, n),
        lead=lead,
    )
