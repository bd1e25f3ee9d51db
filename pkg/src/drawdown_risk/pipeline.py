"""Config-driven pipeline steps: label, train, tune, backtest, explain.

Every step is a function of the config and the input files it names, and
writes only into the configured output directory.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import date

import numpy as np

from .backtest import returns_from_prices, run_multi_portfolio, run_switch_strategy
from .config import PipelineConfig
from .errors import ConfigError, ParseError
from .explain import partial_dependence, permutation_importance
from .labeling import (
    detect_drawdowns,
    label_classification,
    label_regression,
    select_episodes,
    shift_for_actionability,
)
from .models import (
    RiskIndicatorSeries,
    dumps_model,
    indicator_values,
    smooth_indicator,
    train,
)
from .preprocess import fit_pca, fit_scaler, apply_scaler
from .timeseries import align, ingest_csv, pct_change, write_csv
from .tuning import (
    Split,
    WalkForwardEvaluator,
    apply_assignment,
    greedy_search,
    grid_search,
    random_search,
    split_arrays,
    successive_halving,
    trials_to_json,
    walk_forward_splits,
    write_trials_csv,
)


@dataclass(frozen=True)
class Dataset:
    """Model inputs paired for actionability.

    Row i holds features observed at ``dates[i]`` and the target of the
    session ``lead`` rows later.
    """

    X: np.ndarray
    y: np.ndarray
    dates: tuple[date, ...]
    feature_names: tuple[str, ...]
    lead: int


def load_frame(cfg: PipelineConfig):
    frames = []
    for s in cfg.sources:
        path = cfg.resolve(s.path)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"data file not found: {path}")
        try:
            frames.append(ingest_csv(path, s.name, s.category))
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None
    return align(frames, cfg.alignment)


def _backward_returns(values, h):
    out = np.full(len(values), np.nan)
    out[h:] = pct_change(values, h)
    return out


def build_dataset(cfg: PipelineConfig, frame=None) -> Dataset:
    """Backward-looking percentage changes of every series, paired with ``lead``-shifted targets."""
    frame = frame if frame is not None else load_frame(cfg)
    skip = max(cfg.pct_change_horizons)
    if len(frame) <= skip + cfg.target.lead + 1:
        raise ValueError(f"{len(frame)} aligned rows are too few for horizon {skip} and lead {cfg.target.lead}")
    cols, names = [], []
    for name in frame.names:
        for h in cfg.pct_change_horizons:
            cols.append(_backward_returns(frame.series[name], h)[skip:])
            names.append(f"{name}_ret{h}")
    X = np.column_stack(cols)
    y = make_labels(cfg, frame.series[cfg.target_series])[skip:]
    paired = shift_for_actionability(X, y, cfg.target.lead)
    dates = tuple(frame.dates[skip + i] for i in paired.feature_index)
    return Dataset(paired.features, paired.targets, dates, tuple(names), cfg.target.lead)


def make_labels(cfg: PipelineConfig, prices) -> np.ndarray:
    if cfg.target.task == "classification":
        return label_classification(prices, cfg.target)
    return label_regression(prices, cfg.target)


def _ensure_out(cfg: PipelineConfig) -> str:
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def _fmt(v: float) -> str:
    return repr(float(v))


# -- label -------------------------------------------------------------------


def cmd_label(cfg: PipelineConfig) -> list[str]:
    frame = load_frame(cfg)
    prices = frame.series[cfg.target_series]
    labels = make_labels(cfg, prices)
    episodes = detect_drawdowns(prices)
    chosen = set(select_episodes(episodes, cfg.target)) if episodes else set()
    out = _ensure_out(cfg)
    fmt_label = (lambda v: str(int(v))) if cfg.target.task == "classification" else _fmt
    write_csv(
        os.path.join(out, "labels.csv"),
        ["date", "price", "label"],
        [(d.isoformat(), _fmt(p), fmt_label(lab)) for d, p, lab in zip(frame.dates, prices, labels)],
    )
    write_csv(
        os.path.join(out, "episodes.csv"),
        ["peak_date", "trough_date", "depth", "selected"],
        [
            (frame.dates[e.peak_index].isoformat(), frame.dates[e.trough_index].isoformat(), _fmt(e.depth), int(e in chosen))
            for e in episodes
        ],
    )
    return ["labels.csv", "episodes.csv"]


# -- train -------------------------------------------------------------------


def _full_split(n):
    return Split(train=range(0, n), test=range(n, n))


def _prep_params(cfg: PipelineConfig, spec, X) -> dict:
    doc = {"feature_names": None, "scaler": None, "pca": None, "window": spec.prep.window}
    if spec.prep.scaler:
        a, b = spec.prep.minmax_range
        params = fit_scaler(X, spec.prep.scaler, a=a, b=b)
        doc["scaler"] = params.to_dict()
        X = apply_scaler(params, X)
    if spec.prep.pca_components:
        doc["pca"] = fit_pca(X, spec.prep.pca_components).to_dict()
    return doc


def train_full(cfg: PipelineConfig, ds: Dataset, spec=None):
    spec = spec or cfg.spec
    X_tr, y_tr, _, _, _ = split_arrays(spec, ds.X, ds.y, _full_split(len(ds.y)))
    return train(spec.model, (X_tr, y_tr), spec.train, spec.reg)


def cmd_train(cfg: PipelineConfig) -> list[str]:
    ds = build_dataset(cfg)
    model = train_full(cfg, ds)
    out = _ensure_out(cfg)
    _write_text(os.path.join(out, "model.json"), dumps_model(model))
    prep = _prep_params(cfg, cfg.spec, ds.X)
    prep["feature_names"] = list(ds.feature_names)
    _write_text(os.path.join(out, "preprocess.json"), json.dumps(prep, sort_keys=True, indent=1))
    write_csv(
        os.path.join(out, "history.csv"),
        ["epoch", "train_loss", "val_loss", "clamped"],
        [(h.epoch, _fmt(h.train_loss), _fmt(h.val_loss), int(h.clamped)) for h in model.history],
    )
    return ["model.json", "preprocess.json", "history.csv"]


# -- tune --------------------------------------------------------------------


def run_search(cfg: PipelineConfig, ds: Dataset):
    if cfg.search_space is None:
        raise ConfigError("tuning needs a nonempty search.space", "search.space")
    splits = walk_forward_splits(ds.dates, cfg.walk_forward)
    evaluator = WalkForwardEvaluator((ds.X, ds.y), splits, cfg.search["metric"], cfg.spec, purge=ds.lead)
    s = cfg.search
    if s["strategy"] == "grid":
        return grid_search(cfg.search_space, evaluator, n_jobs=s["n_jobs"])
    if s["strategy"] == "greedy":
        return greedy_search(cfg.search_space, evaluator, cycles=s["cycles"])
    if s["strategy"] == "random":
        return random_search(cfg.search_space, evaluator, s["budget"], seed=cfg.seed, n_jobs=s["n_jobs"])
    return successive_halving(cfg.search_space, evaluator, s["n_initial"], s["eta"], s["min_budget"], seed=cfg.seed)


def cmd_tune(cfg: PipelineConfig, ds: Dataset | None = None):
    ds = ds or build_dataset(cfg)
    result = run_search(cfg, ds)
    out = _ensure_out(cfg)
    write_trials_csv(result, os.path.join(out, "trials.csv"))
    _write_text(os.path.join(out, "trials.json"), trials_to_json(result))
    return ["trials.csv", "trials.json"], result


# -- backtest ----------------------------------------------------------------


def read_indicator_csv(path) -> RiskIndicatorSeries:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"indicator file not found: {path}")
    dates, values = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                dates.append(date.fromisoformat(row[0].strip()))
                values.append(float(row[1]))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: bad indicator row {row!r}", lineno) from None
    return RiskIndicatorSeries(tuple(dates), np.array(values))


def out_of_sample_indicator(cfg: PipelineConfig, ds: Dataset, spec=None) -> RiskIndicatorSeries:
    """Walk-forward indicator: each test window is scored by a model trained only on earlier rows."""
    spec = spec or cfg.spec
    splits = walk_forward_splits(ds.dates, cfg.walk_forward)
    rows, values = [], []
    for s in splits:
        X_tr, y_tr, X_te, _, te_rows = split_arrays(spec, ds.X, ds.y, s, purge=ds.lead)
        if rows and te_rows.size and te_rows[0] <= rows[-1][-1]:
            raise ConfigError("walk-forward test windows overlap; set walk_forward.test_units to 1", "walk_forward.test_units")
        if not te_rows.size:
            continue
        model = train(spec.model, (X_tr, y_tr), spec.train, spec.reg)
        rows.append(te_rows)
        values.append(indicator_values(model, model.predict(X_te)))
    if not rows:
        raise ValueError("walk-forward produced no out-of-sample predictions")
    idx = np.concatenate(rows)
    return RiskIndicatorSeries(tuple(ds.dates[i] for i in idx), np.concatenate(values))


def _asset_returns(frame, dates):
    pos = {d: i for i, d in enumerate(frame.dates)}
    missing = [d for d in dates if d not in pos]
    if missing:
        raise ValueError(f"indicator date {missing[0].isoformat()} is not in the aligned price calendar")
    idx = np.array([pos[d] for d in dates])
    series = {name: returns_from_prices(frame.series[name])[idx] for name in frame.names}
    return tuple(dates), series


def cmd_backtest(cfg: PipelineConfig, spec=None) -> list[str]:
    if cfg.strategy is None:
        raise ConfigError("backtest needs a strategy section", "strategy")
    frame = load_frame(cfg)
    out = _ensure_out(cfg)
    if cfg.indicator_path:
        indicator = read_indicator_csv(cfg.resolve(cfg.indicator_path))
    else:
        ds = build_dataset(cfg, frame)
        indicator = out_of_sample_indicator(cfg, ds, spec)
    raw = indicator
    if cfg.use_smoothed and cfg.ema_span > 1:
        indicator = smooth_indicator(indicator, cfg.ema_span)
    returns = _asset_returns(frame, indicator.dates)
    runner = run_switch_strategy if cfg.strategy_kind == "switch" else run_multi_portfolio
    report = runner(indicator, returns, cfg.strategy, cfg.benchmark)
    write_csv(
        os.path.join(out, "indicator.csv"),
        ["date", "raw", "smoothed"],
        [(d.isoformat(), _fmt(r), _fmt(s)) for d, r, s in zip(raw.dates, raw.values, indicator.values)],
    )
    _write_text(os.path.join(out, "report.json"), report.to_json())
    report.write_equity_csv(os.path.join(out, "equity.csv"))
    report.write_trades_csv(os.path.join(out, "trades.csv"))
    report.write_plot_csv(os.path.join(out, "plot.csv"))
    return ["indicator.csv", "report.json", "equity.csv", "trades.csv", "plot.csv"]


# -- explain -----------------------------------------------------------------


def cmd_explain(cfg: PipelineConfig) -> list[str]:
    if cfg.spec.model.architecture == "gru" or cfg.spec.prep.pca_components:
        raise ConfigError("explain works on per-row feature models without PCA", "model.architecture")
    ds = build_dataset(cfg)
    model = train_full(cfg, ds)
    X, _, _, _, _ = split_arrays(cfg.spec, ds.X, ds.y, _full_split(len(ds.y)))
    metric = cfg.explain.get("metric", "cross_entropy" if cfg.target.task == "classification" else "mse")
    report = permutation_importance(
        model, X, ds.y, metric=metric, n_repeats=cfg.explain.get("n_repeats", 5), seed=cfg.seed,
        feature_names=ds.feature_names,
    )
    out = _ensure_out(cfg)
    report.write_csv(os.path.join(out, "importance.csv"))
    rows = []
    for name in ds.feature_names:
        curve = partial_dependence(model, X, name, cfg.explain.get("grid_size", 20), ds.feature_names)
        rows.extend((name, _fmt(g), _fmt(p)) for g, p in zip(curve.grid, curve.averaged_predictions))
    write_csv(os.path.join(out, "pdp.csv"), ["feature", "grid_value", "average_prediction"], rows)
    return ["importance.csv", "pdp.csv"]


# -- full run ----------------------------------------------------------------


def cmd_run(cfg: PipelineConfig) -> list[str]:
    """label, train, tune (when a search space is configured), then backtest with the best assignment."""
    outputs = cmd_label(cfg) + cmd_train(cfg)
    spec = cfg.spec
    if cfg.search_space is not None:
        files, result = cmd_tune(cfg)
        outputs += files
        if result.best is not None:
            spec = apply_assignment(spec, result.best.assignment)
    if cfg.strategy is not None:
        outputs += cmd_backtest(cfg, spec)
    return outputs
