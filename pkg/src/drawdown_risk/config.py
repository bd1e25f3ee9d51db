"""Pipeline configuration: a JSON document validated key by key.

Unknown keys, wrong types and inconsistent settings raise ConfigError with
the dotted path of the offending key (``model.activation``).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .backtest import Portfolio, StrategyConfig
from .errors import ConfigError
from .labeling import TargetSpec
from .models import ModelConfig, RegularizationConfig, TrainConfig
from .preprocess import NoiseConfig
from .timeseries import CATEGORIES, AlignmentPolicy
from .tuning import (
    METRICS,
    Continuous,
    Discrete,
    PipelineSpec,
    Preprocessing,
    SearchSpace,
    WalkForwardConfig,
    apply_assignment,
)

TOP_KEYS = {
    "seed", "output_dir", "data", "target", "features", "preprocess", "model", "train",
    "regularization", "walk_forward", "search", "indicator", "strategy", "explain",
}


def _section(doc, key, allowed, required=()):
    sec = doc.get(key, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key} must be an object", key)
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"unknown key {key}.{k}", f"{key}.{k}")
    for k in required:
        if k not in sec:
            raise ConfigError(f"missing required key {key}.{k}", f"{key}.{k}")
    return sec


def _build(key, fn, **kw):
    try:
        return fn(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {key}: {exc}", key) from None


def _typed(sec, prefix, k, types, default=None):
    v = sec.get(k, default)
    if v is not None and not isinstance(v, types) or isinstance(v, bool) and bool not in _tuple(types):
        raise ConfigError(f"{prefix}.{k} has the wrong type ({type(v).__name__})", f"{prefix}.{k}")
    return v


def _tuple(t):
    return t if isinstance(t, tuple) else (t,)


@dataclass(frozen=True)
class Source:
    path: str
    name: str
    category: str


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: str
    sources: tuple[Source, ...]
    target_series: str
    alignment: AlignmentPolicy
    target: TargetSpec
    pct_change_horizons: tuple[int, ...]
    spec: PipelineSpec
    walk_forward: WalkForwardConfig
    search: dict
    search_space: Optional[SearchSpace]
    ema_span: int
    strategy: Optional[StrategyConfig]
    strategy_kind: str
    benchmark: Any
    use_smoothed: bool
    indicator_path: Optional[str]
    explain: dict = field(default_factory=dict)
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def out(self) -> str:
        return self.resolve(self.output_dir)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", "config") from None
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config(doc: dict, base_dir: str = ".") -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", "config")
    for k in doc:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown key {k}", k)
    if "seed" not in doc:
        raise ConfigError("missing required key seed (all randomness must be seeded)", "seed")
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer", "seed")
    output_dir = doc.get("output_dir", "output")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string", "output_dir")

    data = _section(doc, "data", {"sources", "target_series", "alignment"}, required=("sources",))
    raw_sources = data["sources"]
    if not isinstance(raw_sources, list) or not raw_sources:
        raise ConfigError("data.sources must be a nonempty list", "data.sources")
    sources = []
    for i, s in enumerate(raw_sources):
        key = f"data.sources[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(f"{key} must be an object", key)
        for k in s:
            if k not in ("path", "name", "category"):
                raise ConfigError(f"unknown key {key}.{k}", f"{key}.{k}")
        for k in ("path", "name"):
            if not isinstance(s.get(k), str):
                raise ConfigError(f"{key}.{k} must be a string", f"{key}.{k}")
        cat = s.get("category", "equity_index")
        if cat not in CATEGORIES:
            raise ConfigError(f"{key}.category must be one of {CATEGORIES}", f"{key}.category")
        sources.append(Source(s["path"], s["name"], cat))
    names = [s.name for s in sources]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate source names", "data.sources")
    target_series = data.get("target_series", names[0])
    if target_series not in names:
        raise ConfigError(f"data.target_series {target_series!r} is not a source name", "data.target_series")
    al = _section(data, "alignment", {"join", "fill", "max_fill_gap"}) if "alignment" in data else {}
    alignment = _build("data.alignment", AlignmentPolicy, **al)

    tg = _section(doc, "target", {"task", "top_k", "threshold", "regression_kind", "horizon", "lead"})
    if "top_k" not in tg and "threshold" not in tg:
        tg = {**tg, "threshold": 0.05}
    target = _build("target", TargetSpec, **tg)

    ft = _section(doc, "features", {"pct_change_horizons"})
    horizons = ft.get("pct_change_horizons", [1, 5, 20])
    if not isinstance(horizons, list) or not horizons or not all(isinstance(h, int) and h >= 1 for h in horizons):
        raise ConfigError("features.pct_change_horizons must be a list of positive integers", "features.pct_change_horizons")

    pp = _section(doc, "preprocess", {"scaler", "minmax_range", "pca_components", "window"})
    if "minmax_range" in pp:
        pp = {**pp, "minmax_range": tuple(pp["minmax_range"])}
    if pp.get("scaler") not in (None, "unit", "minmax", "robust", "zscore"):
        raise ConfigError("preprocess.scaler must be unit, minmax, robust, zscore or null", "preprocess.scaler")
    prep = _build("preprocess", Preprocessing, **pp)

    md = _section(doc, "model", {"architecture", "task", "layer_sizes", "activation", "hidden_size", "dropout_p", "batch_norm"})
    if "task" in md and md["task"] != target.task:
        raise ConfigError(f"model.task {md['task']!r} does not match target.task {target.task!r}", "model.task")
    model = _build("model", ModelConfig, **{**md, "task": target.task, "seed": seed})
    if model.architecture == "gru" and not prep.window:
        raise ConfigError("gru models need preprocess.window", "preprocess.window")

    trd = _section(doc, "train", {"learning_rate", "batch_size", "max_epochs", "validation_fraction", "loss", "input_noise_sigma", "grad_clip_norm"})
    trd = dict(trd)
    sigma = trd.pop("input_noise_sigma", None)
    if sigma is not None:
        trd["input_noise"] = NoiseConfig(float(sigma), seed)
    default_loss = "cross_entropy" if target.task == "classification" else "mse"
    trd.setdefault("loss", default_loss)
    if target.task == "regression" and trd["loss"] == "cross_entropy":
        raise ConfigError("train.loss cross_entropy requires a classification target", "train.loss")
    train_cfg = _build("train", TrainConfig, **trd)

    rg = _section(doc, "regularization", {"lambda", "l1_ratio", "early_stopping_patience"})
    reg = _build(
        "regularization", RegularizationConfig,
        lam=rg.get("lambda", 0.0), l1_ratio=rg.get("l1_ratio", 0.0),
        early_stopping_patience=rg.get("early_stopping_patience"),
    )

    wf = _section(doc, "walk_forward", {"split_unit", "initial_train_units", "test_units", "max_splits", "unit_days", "rolling"})
    walk_forward = _build("walk_forward", WalkForwardConfig, **wf)

    spec = PipelineSpec(model=model, train=train_cfg, reg=reg, prep=prep)
    search, space = _parse_search(doc, target, spec)

    ind = _section(doc, "indicator", {"ema_span"})
    ema_span = ind.get("ema_span", 1)
    if not isinstance(ema_span, int) or ema_span < 1:
        raise ConfigError("indicator.ema_span must be an integer >= 1", "indicator.ema_span")

    strategy, kind, benchmark, use_smoothed, indicator_path = _parse_strategy(doc, names)

    ex = _section(doc, "explain", {"n_repeats", "grid_size", "metric"})
    return PipelineConfig(
        seed=seed, output_dir=output_dir, sources=tuple(sources), target_series=target_series,
        alignment=alignment, target=target, pct_change_horizons=tuple(horizons), spec=spec,
        walk_forward=walk_forward, search=search, search_space=space, ema_span=ema_span,
        strategy=strategy, strategy_kind=kind, benchmark=benchmark, use_smoothed=use_smoothed,
        indicator_path=indicator_path, explain=dict(ex), base_dir=base_dir,
    )


def _parse_search(doc, target, spec):
    sr = _section(doc, "search", {"strategy", "metric", "space", "budget", "cycles", "n_initial", "eta", "min_budget", "n_jobs"})
    strategy = sr.get("strategy", "grid")
    if strategy not in ("grid", "greedy", "random", "successive_halving"):
        raise ConfigError("search.strategy must be grid, greedy, random or successive_halving", "search.strategy")
    metric = sr.get("metric", "accuracy" if target.task == "classification" else "mse")
    if metric not in METRICS:
        raise ConfigError(f"search.metric must be one of {sorted(METRICS)}", "search.metric")
    if target.task == "regression" and metric != "mse":
        raise ConfigError("regression targets are scored with mse", "search.metric")
    dims = []
    for i, d in enumerate(sr.get("space", [])):
        key = f"search.space[{i}]"
        if not isinstance(d, dict) or "name" not in d:
            raise ConfigError(f"{key} needs a name", key)
        for k in d:
            if k not in ("name", "values", "low", "high", "scale"):
                raise ConfigError(f"unknown key {key}.{k}", f"{key}.{k}")
        if "values" in d:
            dims.append(_build(key, Discrete, name=d["name"], values=tuple(d["values"])))
        else:
            dims.append(_build(key, Continuous, name=d["name"], low=d.get("low"), high=d.get("high"), scale=d.get("scale", "linear")))
        try:
            probe = d["values"][0] if "values" in d else d["low"]
            apply_assignment(spec, {d["name"]: probe})
        except KeyError:
            raise ConfigError(f"unknown hyperparameter {d['name']!r}", f"{key}.name") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {d['name']!r}: {exc}", key) from None
    space = _build("search.space", SearchSpace, dimensions=tuple(dims)) if dims else None
    if strategy in ("grid", "greedy") and space is not None and not space.all_discrete:
        raise ConfigError(f"{strategy} search needs discrete axes only", "search.space")
    out = {
        "strategy": strategy,
        "metric": metric,
        "budget": sr.get("budget", 10),
        "cycles": sr.get("cycles", 1),
        "n_initial": sr.get("n_initial", 8),
        "eta": sr.get("eta", 2),
        "min_budget": sr.get("min_budget", 1),
        "n_jobs": sr.get("n_jobs", 1),
    }
    for k in ("budget", "cycles", "n_initial", "eta", "min_budget", "n_jobs"):
        if not isinstance(out[k], int) or isinstance(out[k], bool) or out[k] < 1:
            raise ConfigError(f"search.{k} must be a positive integer", f"search.{k}")
    if strategy == "successive_halving" and not out["n_initial"] >= out["eta"] >= 2:
        raise ConfigError("successive halving needs n_initial >= eta >= 2", "search.eta")
    return out, space


def _parse_strategy(doc, names):
    st = _section(doc, "strategy", {
        "kind", "regimes", "hysteresis_margin", "execution_lag_days", "transaction_cost_bp",
        "benchmark", "use_smoothed", "indicator_path", "initial_regime",
    })
    if not st:
        return None, "switch", None, True, None
    kind = st.get("kind", "switch")
    if kind not in ("switch", "multi"):
        raise ConfigError("strategy.kind must be switch or multi", "strategy.kind")
    regimes = []
    for i, r in enumerate(st.get("regimes", [])):
        key = f"strategy.regimes[{i}]"
        if not isinstance(r, dict):
            raise ConfigError(f"{key} must be an object", key)
        for k in r:
            if k not in ("threshold", "name", "weights"):
                raise ConfigError(f"unknown key {key}.{k}", f"{key}.{k}")
        weights = r.get("weights", {})
        for a in weights:
            if a not in names:
                raise ConfigError(f"{key}.weights references unknown asset {a!r}", f"{key}.weights.{a}")
        port = _build(key, Portfolio, name=r.get("name", f"regime{i}"), weights=weights)
        regimes.append((r.get("threshold", -1.0), port))
    if not regimes:
        raise ConfigError("strategy.regimes must list at least one regime", "strategy.regimes")
    cfg = _build(
        "strategy", StrategyConfig, regimes=regimes,
        hysteresis_margin=st.get("hysteresis_margin", 0.0),
        execution_lag_days=st.get("execution_lag_days", 1),
        transaction_cost_bp=st.get("transaction_cost_bp", 0.0),
        initial_regime=st.get("initial_regime"),
    )
    if kind == "switch" and len(regimes) != 2:
        raise ConfigError("switch strategy needs exactly two regimes", "strategy.regimes")
    bench = st.get("benchmark")
    if isinstance(bench, str):
        if bench not in names:
            raise ConfigError(f"strategy.benchmark {bench!r} is not a source name", "strategy.benchmark")
    elif isinstance(bench, dict):
        for a in bench:
            if a not in names:
                raise ConfigError(f"strategy.benchmark references unknown asset {a!r}", f"strategy.benchmark.{a}")
        bench = _build("strategy.benchmark", Portfolio, name="benchmark", weights=bench)
    elif bench is not None:
        raise ConfigError("strategy.benchmark must be an asset name or a weights object", "strategy.benchmark")
    return cfg, kind, bench, bool(st.get("use_smoothed", True)), st.get("indicator_path")
