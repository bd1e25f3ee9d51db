"""Regime switching driven by a risk indicator, portfolio simulation and performance metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .models.indicator import RiskIndicatorSeries

POSITIVE = "positive"
DEFENSIVE = "defensive"
METRIC_FIELDS = (
    "cumulative_return",
    "annualized_return",
    "daily_stddev",
    "annualized_volatility",
    "max_drawdown",
    "sharpe",
    "sortino",
)


@dataclass(frozen=True)
class Portfolio:
    name: str
    weights: Mapping[str, float]

    def __post_init__(self):
        w = {k: float(v) for k, v in self.weights.items()}
        if any(v < 0 for v in w.values()):
            raise ValueError(f"portfolio {self.name!r} has negative weights")
        if abs(sum(w.values()) - 1.0) > 1e-9:
            raise ValueError(f"portfolio {self.name!r} weights sum to {sum(w.values())!r}, not 1")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class StrategyConfig:
    """Regimes ordered from most defensive to most positive.

    ``regimes[i] = (lower_threshold, portfolio)``: regime i covers indicator
    values from its threshold up to the next one. Moving up into a regime
    requires exceeding its threshold by ``hysteresis_margin``; moving down
    happens as soon as the value falls below the current regime's threshold.
    ``initial_regime`` (default: the top regime) is held until the first
    signal becomes executable.
    """

    regimes: Sequence[tuple[float, Portfolio]]
    hysteresis_margin: float = 0.0
    execution_lag_days: int = 1
    transaction_cost_bp: float = 0.0
    initial_regime: Optional[int] = None

    def __post_init__(self):
        regimes = tuple((float(t), p) for t, p in self.regimes)
        object.__setattr__(self, "regimes", regimes)
        if not regimes:
            raise ValueError("at least one regime is required")
        th = [t for t, _ in regimes]
        if any(not a < b for a, b in zip(th, th[1:])):
            raise ValueError(f"regime thresholds must be strictly increasing, got {th}")
        if self.hysteresis_margin < 0:
            raise ValueError("hysteresis_margin must be >= 0")
        if self.execution_lag_days < 1:
            raise ValueError("execution_lag_days must be >= 1")
        if self.transaction_cost_bp < 0:
            raise ValueError("transaction_cost_bp must be >= 0")
        if self.initial_regime is not None and not 0 <= self.initial_regime < len(regimes):
            raise ValueError("initial_regime out of range")

    @property
    def thresholds(self) -> list[float]:
        return [t for t, _ in self.regimes]

    @property
    def start_regime(self) -> int:
        return len(self.regimes) - 1 if self.initial_regime is None else self.initial_regime


def apply_hysteresis(values, lower: float, upper: float, initial_regime: str = POSITIVE) -> list[str]:
    """Two-state band rule: defensive below ``lower``, positive above ``upper``, otherwise hold."""
    if lower > upper:
        raise ValueError(f"lower ({lower}) must not exceed upper ({upper})")
    if initial_regime not in (POSITIVE, DEFENSIVE):
        raise ValueError(f"unknown regime {initial_regime!r}")
    state = initial_regime
    out = []
    for v in values:
        if v < lower:
            state = DEFENSIVE
        elif v > upper:
            state = POSITIVE
        out.append(state)
    return out


def regime_path(values, thresholds: Sequence[float], margin: float, initial: int) -> np.ndarray:
    """Regime index per value for N ordered bands with a hysteresis margin on every boundary."""
    th = list(thresholds)
    state = initial
    out = np.empty(len(values), dtype=int)
    for t, v in enumerate(values):
        if v < th[state] and state > 0:
            j = state - 1
            while j > 0 and v < th[j]:
                j -= 1
            state = j
        else:
            for j in range(len(th) - 1, state, -1):
                if v > th[j] + margin:
                    state = j
                    break
        out[t] = state
    return out


@dataclass(frozen=True)
class Trade:
    date: date
    from_regime: str
    to_regime: str
    turnover: float


@dataclass(frozen=True)
class Metrics:
    cumulative_return: float
    annualized_return: float
    daily_stddev: float
    annualized_volatility: float
    max_drawdown: float
    sharpe: Optional[float]
    sortino: Optional[float]


@dataclass
class BacktestReport:
    dates: tuple
    equity_curve: np.ndarray
    benchmark_curve: np.ndarray
    indicator: np.ndarray
    regimes: list[str]
    trade_log: list[Trade]
    portfolio: Metrics
    benchmark: Metrics
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {"portfolio": asdict(self.portfolio), "benchmark": asdict(self.benchmark)},
            "final_equity": {"portfolio": float(self.equity_curve[-1]), "benchmark": float(self.benchmark_curve[-1])},
            "n_trades": len(self.trade_log),
            "trade_log": [
                {"date": t.date.isoformat(), "from": t.from_regime, "to": t.to_regime, "turnover": t.turnover}
                for t in self.trade_log
            ],
            "equity_curve": [{"date": d.isoformat(), "equity": float(e)} for d, e in zip(self.dates, self.equity_curve)],
            "settings": self.settings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write_equity_csv(self, path):
        _write(path, ["date", "portfolio", "benchmark"],
               [(d.isoformat(), repr(float(e)), repr(float(b))) for d, e, b in zip(self.dates, self.equity_curve, self.benchmark_curve)])

    def write_trades_csv(self, path):
        _write(path, ["date", "from", "to", "turnover"],
               [(t.date.isoformat(), t.from_regime, t.to_regime, repr(t.turnover)) for t in self.trade_log])

    def write_plot_csv(self, path):
        """One row per date: portfolio equity, benchmark equity, indicator value, held regime."""
        rows = zip(self.dates, self.equity_curve, self.benchmark_curve, self.indicator, self.regimes)
        _write(path, ["date", "portfolio_equity", "benchmark_equity", "indicator", "regime"],
               [(d.isoformat(), repr(float(e)), repr(float(b)), repr(float(i)), r) for d, e, b, i, r in rows])


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def returns_from_prices(prices) -> np.ndarray:
    """Daily simple returns aligned with the price dates; the first entry is 0."""
    prices = np.asarray(prices, dtype=float)
    out = np.zeros_like(prices)
    out[1:] = prices[1:] / prices[:-1] - 1.0
    return out


def _returns_matrix(indicator, asset_returns, assets):
    if hasattr(asset_returns, "dates"):
        dates, series = tuple(asset_returns.dates), asset_returns.series
    else:
        dates, series = tuple(asset_returns[0]), asset_returns[1]
    if dates != tuple(indicator.dates):
        raise ValueError("calendar mismatch between indicator and asset returns")
    missing = [a for a in assets if a not in series]
    if missing:
        raise KeyError(f"missing asset returns for {missing}")
    return np.column_stack([np.asarray(series[a], dtype=float) for a in assets])


def compound(returns) -> np.ndarray:
    """Equity curve ``[1, (1+r_1), (1+r_1)(1+r_2), ...]``; ``returns[0]`` is ignored."""
    r = np.asarray(returns, dtype=float)
    eq = np.empty(len(r))
    eq[0] = 1.0
    for t in range(1, len(r)):
        eq[t] = eq[t - 1] * (1.0 + r[t])
    return eq


def _simulate(indicator, asset_returns, config: StrategyConfig, benchmark):
    portfolios = [p for _, p in config.regimes]
    if isinstance(benchmark, str):
        benchmark = Portfolio(benchmark, {benchmark: 1.0})
    benchmark = benchmark or portfolios[-1]
    assets = sorted({a for p in portfolios for a in p.weights} | set(benchmark.weights))
    R = _returns_matrix(indicator, asset_returns, assets)
    W = np.array([[p.weights.get(a, 0.0) for a in assets] for p in portfolios])
    wb = np.array([benchmark.weights.get(a, 0.0) for a in assets])
    n = len(indicator)
    if n < 2:
        raise ValueError("need at least 2 dates to backtest")

    signal = regime_path(indicator.values, config.thresholds, config.hysteresis_margin, config.start_regime)
    lag = config.execution_lag_days
    held = np.empty(n, dtype=int)
    for t in range(1, n):
        held[t] = signal[t - lag] if t - lag >= 0 else config.start_regime
    held[0] = held[1]

    cost = config.transaction_cost_bp * 1e-4
    equity = np.empty(n)
    equity[0] = 1.0
    trades = []
    for t in range(1, n):
        turnover = 0.5 * float(np.abs(W[held[t]] - W[held[t - 1]]).sum())
        growth = 1.0 + float(W[held[t]] @ R[t])
        equity[t] = equity[t - 1] * growth
        if turnover > 0:
            equity[t] *= 1.0 - cost * turnover
        if held[t] != held[t - 1]:
            trades.append(Trade(indicator.dates[t], portfolios[held[t - 1]].name, portfolios[held[t]].name, turnover))
    bench_returns = np.array([float(wb @ R[t]) for t in range(n)])
    bench = compound(bench_returns)
    pm, bm = compute_metrics(equity, bench)
    return BacktestReport(
        dates=tuple(indicator.dates),
        equity_curve=equity,
        benchmark_curve=bench,
        indicator=np.asarray(indicator.values, dtype=float),
        regimes=[portfolios[h].name for h in held],
        trade_log=trades,
        portfolio=pm,
        benchmark=bm,
        settings={
            "thresholds": config.thresholds,
            "hysteresis_margin": config.hysteresis_margin,
            "execution_lag_days": lag,
            "transaction_cost_bp": config.transaction_cost_bp,
            "benchmark": benchmark.name,
        },
    )


def run_switch_strategy(
    indicator: RiskIndicatorSeries, asset_returns, config: StrategyConfig, benchmark: Union[str, Portfolio, None] = None
) -> BacktestReport:
    """Two-regime risk-on/risk-off backtest.

    The regime decided from the indicator at the close of day t is held
    during session ``t + execution_lag_days``. Returns for a date are the
    close-to-close move into that date.
    """
    if len(config.regimes) != 2:
        raise ValueError("switch strategy needs exactly two regimes")
    return _simulate(indicator, asset_returns, config, benchmark)


def run_multi_portfolio(
    indicator: RiskIndicatorSeries, asset_returns, config: StrategyConfig, benchmark: Union[str, Portfolio, None] = None
) -> BacktestReport:
    """N-regime allocation; turnover on a switch is half the L1 distance between weight vectors."""
    if config.thresholds[0] > -1:
        raise ValueError("the lowest regime threshold must be <= -1 so the bands cover [-1, 1]")
    if config.thresholds[-1] >= 1:
        raise ValueError("regime thresholds must lie below 1")
    return _simulate(indicator, asset_returns, config, benchmark)


def turnover(a: Portfolio, b: Portfolio) -> float:
    assets = set(a.weights) | set(b.weights)
    return 0.5 * sum(abs(a.weights.get(k, 0.0) - b.weights.get(k, 0.0)) for k in assets)


def max_drawdown(curve) -> float:
    curve = np.asarray(curve, dtype=float)
    return float(np.min(curve / np.maximum.accumulate(curve) - 1.0))


def _metrics(curve, periods, risk_free, mar):
    curve = np.asarray(curve, dtype=float)
    r = curve[1:] / curve[:-1] - 1.0
    days = len(r)
    growth = curve[-1] / curve[0]
    std = float(r.std())
    excess = float(r.mean()) - risk_free / periods
    downside = float(np.sqrt(np.mean(np.minimum(r - mar, 0.0) ** 2)))
    return Metrics(
        cumulative_return=float(growth - 1.0),
        annualized_return=float(growth ** (periods / days) - 1.0),
        daily_stddev=std,
        annualized_volatility=std * math.sqrt(periods),
        max_drawdown=max_drawdown(curve),
        sharpe=excess / std * math.sqrt(periods) if std > 0 else None,
        sortino=excess / downside * math.sqrt(periods) if downside > 0 else None,
    )


def compute_metrics(equity_curve, benchmark_curve, trading_days_per_year: int = 252, risk_free: float = 0.0, mar: float = 0.0):
    """Metrics for the strategy and its benchmark.

    Population standard deviations; Sharpe and Sortino are annualized by
    ``sqrt(trading_days_per_year)`` and are ``None`` when their denominator is 0.
    Downside deviation averages ``min(r - mar, 0)**2`` over all days.
    """
    equity_curve = np.asarray(equity_curve, dtype=float)
    benchmark_curve = np.asarray(benchmark_curve, dtype=float)
    if equity_curve.shape != benchmark_curve.shape:
        raise ValueError("equity and benchmark curves must be aligned")
    if len(equity_curve) < 2:
        raise ValueError("need at least 2 points")
    if np.any(equity_curve <= 0) or np.any(benchmark_curve <= 0):
        raise ValueError("curves must be strictly positive")
    return (
        _metrics(equity_curve, trading_days_per_year, risk_free, mar),
        _metrics(benchmark_curve, trading_days_per_year, risk_free, mar),
    )
