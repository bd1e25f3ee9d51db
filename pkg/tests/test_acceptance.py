"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line with its runtime."""

import contextlib
import json
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from drawdown_risk.backtest import (
    DEFENSIVE,
    METRIC_FIELDS,
    POSITIVE,
    Portfolio,
    StrategyConfig,
    apply_hysteresis,
    compute_metrics,
    returns_from_prices,
    run_switch_strategy,
)
from drawdown_risk.cli import main as cli_main
from drawdown_risk.labeling import detect_drawdowns, shift_for_actionability
from drawdown_risk.models import BatchNormParams, ModelConfig, RiskIndicatorSeries, TrainConfig, batch_norm_forward, train
from drawdown_risk.timeseries import ingest_csv
from drawdown_risk.tuning import (
    Discrete,
    PipelineSpec,
    SearchSpace,
    WalkForwardConfig,
    evaluate,
    greedy_search,
    grid_search,
    random_search,
    successive_halving,
    walk_forward_splits,
)

import gradcheck
import scenarios

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"


@contextlib.contextmanager
def criterion(capsys, number, title, budget=None):
    start = time.perf_counter()
    outcome = "FAIL"
    try:
        yield
        elapsed = time.perf_counter() - start
        assert budget is None or elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
        outcome = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        limit = f" (< {budget}s)" if budget else ""
        with capsys.disabled():
            print(f"\n{outcome} criterion {number}: {title} [{elapsed:.2f}s{limit}]")


def switches(seq):
    return sum(a != b for a, b in zip(seq, seq[1:]))


def test_criterion_01_covid_drawdown(capsys):
    with criterion(capsys, 1, "2020 S&P 500 deepest drawdown", budget=1.0):
        f = ingest_csv(DATA / "sp500_2020.csv", "spx", "equity_index")
        deepest = min(detect_drawdowns(f.series["spx"]), key=lambda e: e.depth)
        assert f.dates[deepest.peak_index] == date(2020, 2, 19)
        assert f.dates[deepest.trough_index] == date(2020, 3, 23)
        assert abs(deepest.depth - (-0.3392)) <= 0.005


def test_criterion_02_gradient_oracle(capsys):
    with criterion(capsys, 2, "analytic gradients vs central differences", budget=30.0):
        rng = np.random.default_rng(2024)
        worst, count, kinds = 0.0, 0, set()
        for arch, act, task, bn, loss_kind in gradcheck.instance_grid():
            for _ in range(2):
                net, X, y = gradcheck.random_instance(rng, arch, act, task, bn)
                worst = max(worst, gradcheck.check(net, X, y, loss_kind, gradcheck.REG))
                count += 1
            kinds.add(arch if arch != "mlp" else f"mlp-{act}")
        assert count >= 20
        assert {"linear", "logistic", "gru", "mlp-sigmoid", "mlp-tanh", "mlp-relu"} <= kinds
        assert worst < 1e-5


XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([0.0, 1.0, 1.0, 0.0])


def linear_xor_optimum():
    # enumerate half-planes w.x + b > 0 over a grid dense enough to realize every achievable labeling
    best = 0
    for w1 in np.linspace(-1, 1, 21):
        for w2 in np.linspace(-1, 1, 21):
            for b in np.linspace(-1.5, 1.5, 31):
                best = max(best, int(np.sum(((XOR_X @ [w1, w2] + b) > 0) == XOR_Y)))
    return best / 4


def test_criterion_03_xor(capsys):
    with criterion(capsys, 3, "XOR: logistic capped at 75%, 2-2-1 tanh MLP reaches 100%", budget=10.0):
        assert linear_xor_optimum() == 0.75
        logit = train(ModelConfig("logistic"), (XOR_X, XOR_Y), TrainConfig(0.5, 4, 2000), validation=(XOR_X, XOR_Y))
        assert np.mean((logit.predict(XOR_X) > 0.5) == XOR_Y) <= 0.75
        accs = []
        for seed in range(5):
            mlp = train(ModelConfig("mlp", layer_sizes=(2,), activation="tanh", seed=seed), (XOR_X, XOR_Y),
                        TrainConfig(0.5, 4, 5000), validation=(XOR_X, XOR_Y))
            accs.append(np.mean((mlp.predict(XOR_X) > 0.5) == XOR_Y))
        assert max(accs) == 1.0


def stub(assignment, budget=None):
    return float(sum(v for v in assignment.values() if isinstance(v, (int, float))))


def test_criterion_04_search_arithmetic(capsys):
    with criterion(capsys, 4, "search trial counts", budget=5.0):
        space = SearchSpace((Discrete("a", (1, 2)), Discrete("b", (1, 2, 3)), Discrete("c", (1, 2, 3, 4))))
        assert len(grid_search(space, stub).trials) == 24
        binary = lambda d: SearchSpace(tuple(Discrete(f"x{i}", (0, 1)) for i in range(d)))  # noqa: E731
        assert len(greedy_search(binary(3), stub, cycles=1).trials) == 6
        for d in range(1, 7):
            assert len(grid_search(binary(d), stub).trials) == 2**d
            assert len(greedy_search(binary(d), stub, cycles=1).trials) == 2 * d
        for budget in (1, 7, 25):
            assert len(random_search(space, stub, budget, seed=budget).trials) == budget
        sha = successive_halving(space, stub, n_initial=8, eta=2, min_budget=1, seed=0)
        assert [len(r.trial_ids) for r in sha.rungs] + [len(sha.rungs[-1].survivors)] == [8, 4, 2, 1]


def test_criterion_05_temporal_safety(capsys):
    with criterion(capsys, 5, "10^4 walk-forward configurations and leakage probe", budget=60.0):
        rng = np.random.default_rng(5)
        start = date(2015, 1, 1)
        all_days = [start + timedelta(days=i) for i in range(1500)]
        checked = 0
        while checked < 10_000:
            n = int(rng.integers(1, 1500))
            unit = ("year", "month", "fixed_days")[int(rng.integers(3))]
            cfg = WalkForwardConfig(
                unit, int(rng.integers(1, 5)), int(rng.integers(1, 4)),
                unit_days=int(rng.integers(1, 90)) if unit == "fixed_days" else None,
                rolling=bool(rng.integers(2)),
            )
            try:
                splits = walk_forward_splits(all_days[:n], cfg)
            except ValueError:
                continue
            for s in splits:
                assert s.train[-1] < s.test[0]
            checked += 1

        n = 1200
        labels = rng.permutation(np.r_[np.zeros(n // 2), np.ones(n // 2)])
        raw_X = np.column_stack([labels, rng.normal(size=n)])
        paired = shift_for_actionability(raw_X, labels, 2)
        dates = all_days[: len(paired)]
        splits = walk_forward_splits(dates, WalkForwardConfig("fixed_days", 2, 1, unit_days=200))
        spec = PipelineSpec(ModelConfig("mlp", layer_sizes=(4,), seed=0), TrainConfig(0.1, 32, 20))
        res = evaluate({}, (paired.features, paired.targets), splits, "accuracy", spec, purge=2)
        assert abs(res.mean - 0.5) <= 0.05


def test_criterion_06_hysteresis(capsys):
    with criterion(capsys, 6, "hysteresis never adds switches; worked trace", budget=5.0):
        assert apply_hysteresis([0.1, -0.05, 0.1, 0.25], 0.0, 0.2) == [POSITIVE, DEFENSIVE, DEFENSIVE, POSITIVE]
        rng = np.random.default_rng(6)
        for _ in range(1000):
            path = np.clip(np.cumsum(rng.normal(0, 0.2, size=int(rng.integers(1, 200)))), -1, 1)
            assert switches(apply_hysteresis(path, 0.0, 0.2)) <= switches(apply_hysteresis(path, 0.0, 0.0))


def test_criterion_07_backtest_oracle(capsys):
    with criterion(capsys, 7, "10-day 2-asset hand trace at 1e-12; single-asset degenerate"):
        ind, rets, cfg = scenarios.two_asset_inputs()
        rep = run_switch_strategy(ind, rets, cfg)
        assert len(rep.trade_log) == 1
        assert np.max(np.abs(rep.equity_curve - scenarios.hand_equity())) <= 1e-12

        f = ingest_csv(DATA / "sp500_2020.csv", "spx", "equity_index")
        spx = Portfolio("spx", {"spx": 1.0})
        signal = RiskIndicatorSeries(f.dates, np.cos(np.arange(len(f)) / 3.0))
        one = StrategyConfig([(-1, spx), (0, spx)], transaction_cost_bp=10)
        deg = run_switch_strategy(signal, (f.dates, {"spx": returns_from_prices(f.series["spx"])}), one)
        np.testing.assert_allclose(deg.equity_curve, f.series["spx"] / f.series["spx"][0], rtol=1e-12, atol=0)


def test_criterion_08_batch_norm_identity(capsys):
    with criterion(capsys, 8, "batch-norm moments and identity recovery"):
        h = np.random.default_rng(8).normal(-4, 3, size=(128, 6))
        mu, sigma = h.mean(0), h.std(0)
        normed = batch_norm_forward(h, BatchNormParams(np.ones(6), np.zeros(6)), eps=0)
        assert np.all(np.abs(normed.mean(0)) < 1e-8)
        assert np.all(np.abs(normed.var(0) - 1) < 1e-6)
        assert np.max(np.abs(batch_norm_forward(h, BatchNormParams(sigma, mu), eps=0) - h)) < 1e-10


def test_criterion_09_metrics_identity(capsys):
    with criterion(capsys, 9, "benchmark metrics identity; seven metric fields"):
        f = ingest_csv(DATA / "sp500_2015_2021.csv", "spx", "equity_index")
        curve = f.series["spx"] / f.series["spx"][0]
        pm, bm = compute_metrics(curve, curve)
        assert pm == bm
        assert len(METRIC_FIELDS) == 7 and set(pm.__dict__) == set(METRIC_FIELDS)
        ind, rets, cfg = scenarios.two_asset_inputs()
        doc = json.loads(run_switch_strategy(ind, rets, cfg, benchmark="equity").to_json())
        assert set(doc["metrics"]["portfolio"]) == set(doc["metrics"]["benchmark"]) == set(METRIC_FIELDS)


def test_criterion_10_determinism(capsys, tmp_path):
    with criterion(capsys, 10, "full pipeline rerun is byte-identical"):
        doc = json.loads((ROOT / "configs" / "example.json").read_text())
        doc["data"]["sources"] = [dict(s, path=str((ROOT / "configs" / s["path"]).resolve())) for s in doc["data"]["sources"]]
        trees = []
        for run in ("a", "b"):
            doc["output_dir"] = run
            cfg = tmp_path / f"{run}.json"
            cfg.write_text(json.dumps(doc))
            assert cli_main(["run", str(cfg)]) == 0
            capsys.readouterr()
            trees.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
        assert {"labels.csv", "model.json", "trials.csv", "report.json", "equity.csv"} <= set(trees[0])
        assert trees[0] == trees[1]
