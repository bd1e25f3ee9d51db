"""Walk-forward validation and hyperparameter search."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import DivergenceError
from .models import ModelConfig, RegularizationConfig, TrainConfig, train
from .models.losses import cross_entropy, mse
from .preprocess import NoiseConfig, apply_scaler, fit_pca, fit_scaler, pca_transform

log = logging.getLogger(__name__)


# -- walk-forward splits -----------------------------------------------------


@dataclass(frozen=True)
class WalkForwardConfig:
    split_unit: str = "year"  # "year" | "month" | "fixed_days"
    initial_train_units: int = 1
    test_units: int = 1
    max_splits: Optional[int] = None
    unit_days: Optional[int] = None  # row count per unit when split_unit == "fixed_days"
    rolling: bool = False

    def __post_init__(self):
        if self.split_unit not in ("year", "month", "fixed_days"):
            raise ValueError(f"unknown split_unit {self.split_unit!r}")
        if self.split_unit == "fixed_days" and (self.unit_days is None or self.unit_days < 1):
            raise ValueError("fixed_days needs unit_days >= 1")
        if self.initial_train_units < 1 or self.test_units < 1:
            raise ValueError("initial_train_units and test_units must be >= 1")
        if self.max_splits is not None and self.max_splits < 1:
            raise ValueError("max_splits must be >= 1")


@dataclass(frozen=True)
class Split:
    train: range
    test: range


def _unit_starts(dates, config):
    n = len(dates)
    if config.split_unit == "fixed_days":
        return list(range(0, n, config.unit_days))
    if config.split_unit == "year":
        key = [d.year for d in dates]
    else:
        key = [(d.year, d.month) for d in dates]
    return [i for i in range(n) if i == 0 or key[i] != key[i - 1]]


def walk_forward_splits(dates: Sequence, config: WalkForwardConfig) -> list[Split]:
    """Expanding-window splits: split k trains on units ``[0, initial + k)`` and
    tests on the next ``test_units`` units. ``rolling=True`` keeps the training
    window at ``initial_train_units`` units. ``max_splits`` keeps the most
    recent splits.
    """
    n = len(dates)
    starts = _unit_starts(dates, config) if n else []
    bounds = starts + [n]
    n_units = len(starts)
    need = config.initial_train_units + config.test_units
    if n_units < need:
        raise ValueError(f"insufficient data: {n_units} units available, {need} required")
    splits = []
    for k in range(n_units - need + 1):
        train_end = config.initial_train_units + k
        train_start = k if config.rolling else 0
        splits.append(
            Split(
                train=range(bounds[train_start], bounds[train_end]),
                test=range(bounds[train_end], bounds[train_end + config.test_units]),
            )
        )
    if config.max_splits is not None:
        splits = splits[-config.max_splits :]
    return splits


def kfold_indices(n: int, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous k-fold partition for data without temporal order.

    Not for time series: folds other than the last train on observations that
    come after the fold being tested.
    """
    if not 2 <= k <= n:
        raise ValueError("need 2 <= k <= n")
    edges = np.linspace(0, n, k + 1).astype(int)
    idx = np.arange(n)
    return [(np.concatenate([idx[: edges[i]], idx[edges[i + 1] :]]), idx[edges[i] : edges[i + 1]]) for i in range(k)]


# -- evaluation --------------------------------------------------------------


def accuracy(pred, y):
    return float(np.mean((np.asarray(pred) >= 0.5) == (np.asarray(y) >= 0.5)))


def precision(pred, y):
    p, t = np.asarray(pred) >= 0.5, np.asarray(y) >= 0.5
    return float((p & t).sum() / p.sum()) if p.sum() else 0.0


def recall(pred, y):
    p, t = np.asarray(pred) >= 0.5, np.asarray(y) >= 0.5
    return float((p & t).sum() / t.sum()) if t.sum() else 0.0


# name -> (function, greater_is_better)
METRICS: dict[str, tuple[Callable, bool]] = {
    "accuracy": (accuracy, True),
    "precision": (precision, True),
    "recall": (recall, True),
    "cross_entropy": (lambda p, y: cross_entropy(np.clip(p, 0, 1), y)[0], False),
    "mse": (mse, False),
}


@dataclass(frozen=True)
class Preprocessing:
    scaler: Optional[str] = "zscore"
    minmax_range: tuple[float, float] = (-1.0, 1.0)
    pca_components: Optional[int] = None
    window: Optional[int] = None  # sequence length for GRU inputs


@dataclass(frozen=True)
class PipelineSpec:
    model: ModelConfig
    train: TrainConfig
    reg: RegularizationConfig = RegularizationConfig()
    prep: Preprocessing = Preprocessing()


def apply_assignment(spec: PipelineSpec, assignment: dict, budget: Optional[int] = None) -> PipelineSpec:
    """Override fields of ``spec`` by name.

    Recognized names are the fields of ModelConfig, TrainConfig and
    Preprocessing, plus ``lambda``/``lam``, ``l1_ratio``, ``patience`` and
    ``noise_sigma``. A ``budget`` replaces ``max_epochs``.
    """
    model, tr, reg, prep = {}, {}, {}, {}
    model_fields = set(ModelConfig.__dataclass_fields__)
    train_fields = set(TrainConfig.__dataclass_fields__)
    prep_fields = set(Preprocessing.__dataclass_fields__)
    for name, value in assignment.items():
        if name in ("lambda", "lam"):
            reg["lam"] = value
        elif name == "l1_ratio":
            reg["l1_ratio"] = value
        elif name == "patience":
            reg["early_stopping_patience"] = value
        elif name == "noise_sigma":
            seed = spec.train.input_noise.seed if spec.train.input_noise else spec.model.seed
            tr["input_noise"] = NoiseConfig(float(value), seed)
        elif name in model_fields:
            model[name] = tuple(value) if name == "layer_sizes" else value
        elif name in train_fields:
            tr[name] = value
        elif name in prep_fields:
            prep[name] = value
        else:
            raise KeyError(f"unknown hyperparameter {name!r}")
    if budget is not None:
        tr["max_epochs"] = int(budget)
    return PipelineSpec(
        model=replace(spec.model, **model),
        train=replace(spec.train, **tr),
        reg=replace(spec.reg, **reg),
        prep=replace(spec.prep, **prep),
    )


def _window_rows(X, rows, length):
    """Sequences of ``length`` rows of ``X`` ending at each of ``rows``; rows without a full history are dropped."""
    rows = np.asarray(rows, dtype=int)
    keep = rows >= length - 1
    rows = rows[keep]
    idx = rows[:, None] - length + 1 + np.arange(length)[None, :]
    return X[idx], keep


def fit_transform_split(prep: Preprocessing, X_train, X_test):
    """Fit scaler/PCA on the training rows only and apply to both ranges."""
    if prep.scaler:
        a, b = prep.minmax_range
        params = fit_scaler(X_train, prep.scaler, a=a, b=b)
        X_train, X_test = apply_scaler(params, X_train), apply_scaler(params, X_test)
    if prep.pca_components:
        pca = fit_pca(X_train, prep.pca_components)
        X_train, X_test = pca_transform(pca, X_train), pca_transform(pca, X_test)
    return X_train, X_test


@dataclass(frozen=True)
class EvalResult:
    mean: float
    per_split: tuple[float, ...]


def split_arrays(spec: PipelineSpec, X, y, split: Split, purge: int = 0):
    """Model-ready arrays for one split.

    Returns ``(X_train, y_train, X_test, y_test, test_rows)`` where
    ``test_rows`` are the dataset row indices that received a test sample.
    Preprocessing is fit on the (purged) training rows only.
    """
    tr, te = np.asarray(split.train, dtype=int), np.asarray(split.test, dtype=int)
    if purge:
        tr = tr[:-purge]
    if len(tr) < 2:
        raise ValueError(f"split with test rows starting at {split.test.start} has fewer than 2 training rows")
    block = np.arange(split.train.start, split.test.stop)
    _, Z = fit_transform_split(spec.prep, X[tr], X[block])
    pos_tr, pos_te = tr - block[0], te - block[0]
    if spec.model.architecture == "gru":
        L = spec.prep.window or 1
        X_tr, keep_tr = _window_rows(Z, pos_tr, L)
        X_te, keep_te = _window_rows(Z, pos_te, L)
        return X_tr, y[tr][keep_tr], X_te, y[te][keep_te], te[keep_te]
    return Z[pos_tr], y[tr], Z[pos_te], y[te], te


def evaluate(
    assignment: dict, dataset, splits: Sequence[Split], metric: str, spec: PipelineSpec, budget=None, purge: int = 0
) -> EvalResult:
    """Train a fresh model per split and score it on the split's test rows.

    ``dataset`` is ``(X, y)`` already paired for actionability (row t holds
    x(t) and y(t + lead)). Preprocessing is fit on each training range only.
    ``purge`` drops that many rows from the end of each training range; with
    ``purge=lead`` no training target is observed inside the test window.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    fn, _ = METRICS[metric]
    spec = apply_assignment(spec, assignment, budget)
    X, y = (np.asarray(a, dtype=float) for a in dataset)
    scores = []
    for s in splits:
        X_tr, y_tr, X_te, y_te, _ = split_arrays(spec, X, y, s, purge)
        model = train(spec.model, (X_tr, y_tr), spec.train, spec.reg)
        scores.append(float(fn(model.predict(X_te), y_te)))
    return EvalResult(float(np.mean(scores)), tuple(scores))


def walk_forward_predict(dataset, splits: Sequence[Split], spec: PipelineSpec, purge: int = 0):
    """Out-of-sample predictions stitched across splits.

    Returns ``(rows, predictions, models)``; ``rows`` are dataset row
    indices in increasing order. Test windows must not overlap.
    """
    X, y = (np.asarray(a, dtype=float) for a in dataset)
    rows, preds, models = [], [], []
    for s in splits:
        X_tr, y_tr, X_te, _, te_rows = split_arrays(spec, X, y, s, purge)
        if rows and te_rows.size and te_rows[0] <= rows[-1][-1]:
            raise ValueError("overlapping test windows; use test_units equal to the split step")
        model = train(spec.model, (X_tr, y_tr), spec.train, spec.reg)
        rows.append(te_rows)
        preds.append(model.predict(X_te))
        models.append(model)
    return np.concatenate(rows), np.concatenate(preds), models


class WalkForwardEvaluator:
    """Search objective: mean walk-forward score, oriented so larger is better.

    Loss metrics (MSE, cross-entropy) are negated.
    """

    def __init__(self, dataset, splits, metric: str, spec: PipelineSpec, purge: int = 0):
        self.dataset = dataset
        self.purge = purge
        self.splits = list(splits)
        self.metric = metric
        self.spec = spec
        self.greater_is_better = METRICS[metric][1]

    def __call__(self, assignment: dict, budget: Optional[int] = None) -> float:
        res = evaluate(assignment, self.dataset, self.splits, self.metric, self.spec, budget, self.purge)
        return res.mean if self.greater_is_better else -res.mean


# -- search ------------------------------------------------------------------


@dataclass(frozen=True)
class Discrete:
    name: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError(f"axis {self.name!r} needs at least one candidate")


@dataclass(frozen=True)
class Continuous:
    name: str
    low: float
    high: float
    scale: str = "linear"

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"axis {self.name!r}: low must be < high")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"axis {self.name!r}: scale must be linear or log")
        if self.scale == "log" and self.low <= 0:
            raise ValueError(f"axis {self.name!r}: log scale needs low > 0")


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("duplicate axis names")

    @property
    def all_discrete(self) -> bool:
        return all(isinstance(d, Discrete) for d in self.dimensions)

    def sample(self, rng) -> dict:
        out = {}
        for d in self.dimensions:
            if isinstance(d, Discrete):
                out[d.name] = d.values[int(rng.integers(len(d.values)))]
            elif d.scale == "log":
                out[d.name] = float(10 ** rng.uniform(math.log10(d.low), math.log10(d.high)))
            else:
                out[d.name] = float(rng.uniform(d.low, d.high))
        return out


@dataclass
class Trial:
    id: int
    assignment: dict
    budget_used: Optional[int] = None
    score: float = math.nan
    status: str = "completed"  # completed | pruned | failed
    message: str = ""


@dataclass
class SearchResult:
    best: Optional[Trial]
    trials: list[Trial]
    rungs: list = field(default_factory=list)


def _run_trial(evaluator, trial_id, assignment, budget):
    try:
        score = float(evaluator(dict(assignment), budget))
    except (ArithmeticError, ValueError, RuntimeError, DivergenceError) as exc:
        log.warning("trial %d failed: %s", trial_id, exc)
        return Trial(trial_id, dict(assignment), budget, math.nan, "failed", str(exc))
    if not math.isfinite(score):
        return Trial(trial_id, dict(assignment), budget, score, "failed", "non-finite score")
    return Trial(trial_id, dict(assignment), budget, score)


def _run_all(evaluator, assignments, budget, first_id=0, n_jobs=1):
    jobs = [(first_id + i, a) for i, a in enumerate(assignments)]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            return list(pool.map(lambda j: _run_trial(evaluator, j[0], j[1], budget), jobs))
    return [_run_trial(evaluator, i, a, budget) for i, a in jobs]


def best_trial(trials) -> Optional[Trial]:
    """Highest score among completed trials; ties go to the lower id."""
    best = None
    for t in trials:
        if t.status == "failed" or not math.isfinite(t.score):
            continue
        if best is None or t.score > best.score:
            best = t
    return best


def _require_discrete(space):
    if not space.all_discrete:
        bad = [d.name for d in space.dimensions if not isinstance(d, Discrete)]
        raise ValueError(f"continuous axes not allowed here: {bad}")


def grid_search(space: SearchSpace, evaluator, budget=None, n_jobs: int = 1) -> SearchResult:
    _require_discrete(space)
    names = [d.name for d in space.dimensions]
    combos = [dict(zip(names, c)) for c in itertools.product(*(d.values for d in space.dimensions))]
    trials = _run_all(evaluator, combos, budget, n_jobs=n_jobs)
    return SearchResult(best_trial(trials), trials)


def greedy_search(space: SearchSpace, evaluator, cycles: int = 1, budget=None) -> SearchResult:
    """Coordinate-wise hill climbing from the first value of every axis."""
    _require_discrete(space)
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    current = {d.name: d.values[0] for d in space.dimensions}
    trials: list[Trial] = []
    for _ in range(cycles):
        before = dict(current)
        for d in space.dimensions:
            sweep = [{**current, d.name: v} for v in d.values]
            results = _run_all(evaluator, sweep, budget, first_id=len(trials))
            trials.extend(results)
            winner = best_trial(results)
            if winner is not None:
                current[d.name] = winner.assignment[d.name]
        if current == before:
            break
    return SearchResult(best_trial(trials), trials)


def random_search(space: SearchSpace, evaluator, budget: int, seed: int = 0, epochs=None, n_jobs: int = 1) -> SearchResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    assignments = [space.sample(rng) for _ in range(budget)]
    trials = _run_all(evaluator, assignments, epochs, n_jobs=n_jobs)
    return SearchResult(best_trial(trials), trials)


@dataclass(frozen=True)
class Rung:
    index: int
    budget: int
    trial_ids: tuple[int, ...]
    survivors: tuple[int, ...]  # trial ids promoted to the next rung


def successive_halving(
    space: SearchSpace, evaluator, n_initial: int, eta: int = 2, min_budget: int = 1, seed: int = 0
) -> SearchResult:
    """Random configurations evaluated on a geometric epoch budget.

    Each rung keeps the best ``ceil(n / eta)`` configurations (failures rank
    last) and multiplies their budget by ``eta``, until one remains.
    """
    if eta < 2 or n_initial < eta:
        raise ValueError("need n_initial >= eta >= 2")
    if min_budget < 1:
        raise ValueError("min_budget must be >= 1")
    rng = np.random.default_rng(seed)
    configs = [space.sample(rng) for _ in range(n_initial)]
    trials: list[Trial] = []
    rungs: list[Rung] = []
    budget = min_budget
    alive = list(range(n_initial))  # indices into configs
    while len(alive) > 1:
        results = _run_all(evaluator, [configs[c] for c in alive], budget, first_id=len(trials))
        trials.extend(results)
        keep = math.ceil(len(alive) / eta)
        ranked = sorted(
            zip(alive, results),
            key=lambda cr: (cr[1].status == "failed", -cr[1].score if math.isfinite(cr[1].score) else 0, cr[1].id),
        )
        promoted = ranked[:keep]
        for _, t in ranked[keep:]:
            if t.status == "completed":
                t.status = "pruned"
        rungs.append(Rung(len(rungs), budget, tuple(t.id for t in results), tuple(t.id for _, t in promoted)))
        alive = [c for c, _ in promoted]
        budget *= eta
    final_id = rungs[-1].survivors[0]
    best = trials[final_id] if trials[final_id].status == "completed" else None
    return SearchResult(best, trials, rungs)


def total_budget(result: SearchResult) -> int:
    return sum(r.budget * len(r.trial_ids) for r in result.rungs)


# -- ledger export -----------------------------------------------------------


def _jsonable(v: Any):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _score(v):
    return v if math.isfinite(v) else None


def trials_to_json(result: SearchResult) -> str:
    doc = {
        "best_id": result.best.id if result.best else None,
        "trials": [
            {
                "id": t.id,
                "assignment": {k: _jsonable(v) for k, v in t.assignment.items()},
                "budget": t.budget_used,
                "score": _score(t.score),
                "status": t.status,
                "message": t.message,
            }
            for t in result.trials
        ],
        "rungs": [
            {"index": r.index, "budget": r.budget, "trial_ids": list(r.trial_ids), "survivors": list(r.survivors)}
            for r in result.rungs
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def write_trials_csv(result: SearchResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "assignment", "budget", "score", "status"])
        for t in result.trials:
            assignment = json.dumps({k: _jsonable(v) for k, v in t.assignment.items()}, sort_keys=True)
            score = "" if not math.isfinite(t.score) else repr(t.score)
            w.writerow([t.id, assignment, "" if t.budget_used is None else t.budget_used, score, t.status])
