"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line at the end of the run."""
import json
import time

import numpy as np
import pytest

from fairbench import harness
from fairbench.core import (
    Dataset,
    UndefinedMetricError,
    balanced_accuracy,
    ind_metric,
    sf_metric,
    sp_metric,
)
from fairbench.data import GermanConfig, SimConfig, characteristics, generate_simulation, load_german
from fairbench.harness import (
    ExperimentConfig,
    dominates,
    pareto_frontier,
    read_matrix,
    read_pareto,
    read_summary,
    result_matrix,
    run_experiment,
)
from fairbench.inprocess import (
    LogisticParams,
    adversary_loss_grads,
    logistic_loss_grad,
    pi_loss_grad,
    prejudice_ratios,
    sigmoid,
    solve_group_thresholds,
    train_logistic,
    train_pi_regularized,
)
from fairbench.logic import LogicalProcessor, apply_lp, lp_counts
from fairbench.postprocess import RejectOptionParams, fit_eq_odds, group_roc_points, reject_option
from fairbench.preprocess import RepairParams, di_remove, reweighing_weights

from conftest import ACCEPTANCE_LINES, GERMAN_PATH, make_dataset
from oracles import (
    brute_metafair,
    brute_metrics,
    central_difference,
    eq_odds_grid_search,
    naive_adversary_loss,
    naive_logistic_loss,
    naive_prejudice_index,
    simulation_default_rate_mc,
)

METRIC_FNS = {"ind": ind_metric, "sp": sp_metric, "sf": sf_metric, "balanced_accuracy": balanced_accuracy}


def record(number, name, ok, detail, seconds, limit=None):
    timing = f"{seconds:.2f}s" + (f" (limit {limit:g}s)" if limit is not None else "")
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}; {timing}")


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


# --------------------------------------------------------------------------
# 1. metrics against brute force


def test_c01_metric_oracle():
    worst, checked = 0.0, 0
    with Clock() as clock:
        rng = np.random.default_rng(20240101)
        for i in range(20):
            pred, label, group = (rng.integers(0, 2, 16) for _ in range(3))
            weights = None if i % 2 == 0 else rng.uniform(0.2, 3.0, 16)
            data = Dataset(np.zeros((16, 1)), label, {"a": group}, weights=weights)
            expected = brute_metrics(list(pred), list(label), list(group), None if weights is None else list(weights))
            for name, fn in METRIC_FNS.items():
                if expected[name] is None:
                    with pytest.raises(UndefinedMetricError):
                        fn(data, pred, "a")
                    continue
                worst = max(worst, abs(fn(data, pred, "a") - expected[name]))
                checked += 1
    ok = worst <= 1e-12 and clock.seconds < 1.0
    record(1, "metric oracle", ok, f"{checked} values, max |diff| {worst:.1e} (tol 1e-12)", clock.seconds, 1)
    assert worst <= 1e-12
    assert clock.seconds < 1.0


# --------------------------------------------------------------------------
# 2. logical processors


def test_c02_logical_identities():
    failures = 0
    with Clock() as clock:
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 300))
            p1, p2 = rng.random(2)
            a1 = (rng.random(n) < p1).astype(int)
            a2 = (rng.random(n) < p2).astype(int)
            data = Dataset(np.zeros((n, 1)), np.zeros(n, int), {"a1": a1, "a2": a2})
            or_, and_, xor = lp_counts(data, ["a1", "a2"])
            failures += or_ != and_ + xor
            failures += a1.sum() + a2.sum() != or_ + and_
        pairs = Dataset(np.zeros((4, 1)), np.zeros(4, int), {"a1": [0, 0, 1, 1], "a2": [0, 1, 0, 1]})
        tables = {"or": [0, 1, 1, 1], "and": [0, 0, 0, 1], "xor": [0, 1, 1, 0]}
        for kind, expected in tables.items():
            got = apply_lp(LogicalProcessor(kind), pairs, ["a1", "a2"]).column(kind).tolist()
            failures += got != expected
    ok = failures == 0 and clock.seconds < 1.0
    record(2, "logical-processor identities", ok, f"{failures} violations over 100 datasets + 3 truth tables",
           clock.seconds, 1)
    assert failures == 0
    assert clock.seconds < 1.0


# --------------------------------------------------------------------------
# 3. simulation statistics


def test_c03_simulation_statistics():
    targets = {"a1": 0.50, "a2": 0.50, "or": 0.75, "and": 0.25, "xor": 0.50}
    with Clock() as clock:
        stats = characteristics(generate_simulation(SimConfig(n=5000), 0))
    constant = simulation_default_rate_mc()
    gaps = {k: abs(stats[k] - v) for k, v in targets.items()}
    gaps["default_rate"] = abs(stats["default_rate"] - constant)
    ok = max(gaps.values()) <= 0.02 and clock.seconds < 5.0
    shown = ", ".join(f"{k}={stats[k]:.3f}" for k in (*targets, "default_rate"))
    record(3, "simulation statistics", ok, f"{shown} (MC default rate {constant:.4f}; tol 0.02)", clock.seconds, 5)
    assert max(gaps.values()) <= 0.02, gaps
    assert clock.seconds < 5.0


# --------------------------------------------------------------------------
# 4. German ingestion


def test_c04_german_ingestion():
    with Clock() as clock:
        data = load_german(GermanConfig(path=GERMAN_PATH, age_inclusive=True))
    stats = characteristics(data)
    default_rate = float(np.mean(data.label == 0))
    a1 = stats["a1"]
    ok = data.n == 1000 and default_rate == 0.30 and abs(a1 - 0.15) <= 0.01 and clock.seconds < 1.0
    others = ", ".join(f"{k}={stats[k]:.3f}" for k in ("a2", "or", "and", "xor"))
    record(4, "German ingestion", ok,
           f"n={data.n}, P(Y=0)={default_rate:.3f}, A1 rate (age<=25)={a1:.3f} vs 0.15 +/- 0.01; "
           f"reported only: {others}", clock.seconds, 1)
    strict = characteristics(load_german(GermanConfig(path=GERMAN_PATH)))["a1"]
    ACCEPTANCE_LINES.append(f"       4. note: A1 rate under age<25 (loader default) = {strict:.3f}")
    assert data.n == 1000
    assert default_rate == 0.30
    assert clock.seconds < 1.0
    assert abs(a1 - 0.15) <= 0.01, f"A1 rate under age<=25 is {a1:.3f}"


# --------------------------------------------------------------------------
# 5. gradients


def _instance(seed, n=9, d=3):
    rng = np.random.default_rng(seed)
    Z = np.hstack([np.ones((n, 1)), rng.normal(size=(n, d))])
    y = rng.integers(0, 2, n).astype(float)
    a = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    w = rng.uniform(0.5, 2.0, n)
    return Z, y, a, w, rng.normal(scale=0.7, size=d + 1), rng.normal(size=3)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def test_c05_gradient_checks():
    worst = 0.0
    with Clock() as clock:
        for seed in range(10):
            Z, y, a, w, theta, u = _instance(seed)
            l2, eta = 1e-2, 1.3
            _, g = logistic_loss_grad(theta, Z, y, w, l2)
            worst = max(worst, _rel(g, central_difference(lambda t: naive_logistic_loss(t, Z, y, w, l2), theta)))

            frozen = sigmoid(Z @ theta)

            def pi_objective(t):
                p = 1 / (1 + np.exp(-(Z @ t)))
                return naive_logistic_loss(t, Z, y, w, l2) + eta * naive_prejudice_index(
                    list(p), list(a), list(w), list(frozen))

            _, g = pi_loss_grad(theta, Z, y, w, a, l2, eta, prejudice_ratios(frozen, a, w))
            worst = max(worst, _rel(g, central_difference(pi_objective, theta)))

            _, gu, gt = adversary_loss_grads(theta, u, Z, y, a, w, "prediction_and_label")
            worst = max(worst, _rel(gu, central_difference(
                lambda v: naive_adversary_loss(theta, v, Z, y, a, w, True), u)))
            worst = max(worst, _rel(gt, central_difference(
                lambda t: naive_adversary_loss(t, u, Z, y, a, w, True), theta)))
    ok = worst <= 1e-5 and clock.seconds < 5.0
    record(5, "gradient checks", ok, f"max relative error {worst:.1e} over 10 instances x 3 losses (tol 1e-5)",
           clock.seconds, 5)
    assert worst <= 1e-5
    assert clock.seconds < 5.0


# --------------------------------------------------------------------------
# 6. fixed points


def test_c06_fixed_points():
    results = {}
    with Clock() as clock:
        # (a) reweighing: A and Y independent by construction (balanced contingency table)
        a = np.repeat([0, 0, 1, 1], [20, 30, 40, 60])
        y = np.repeat([0, 1, 0, 1], [20, 30, 40, 60])
        data = Dataset(np.zeros((a.size, 1)), y, {"a": a})
        results["a"] = max(abs(w - 1.0) for w in reweighing_weights(data, "a").values()) <= 1e-10

        # (b) DI remover at lambda 0
        sample = make_dataset(n=300, seed=3)
        repaired, _ = di_remove(sample, "a1", RepairParams(lam=0.0))
        results["b"] = np.array_equal(repaired.features, sample.features)

        # (c) reject option with theta just above 0.5
        model = train_logistic(sample)
        scores = model.score(sample)
        relabeled = reject_option(scores, sample.column("a1"), RejectOptionParams(np.nextafter(0.5, 1.0)))
        results["c"] = np.array_equal(relabeled, (scores > 0.5).astype(np.int8))

        # (d) equalized odds on an already equalized base classifier
        rng = np.random.default_rng(11)
        yhat, lab, grp = [], [], []
        for g in (0, 1):
            for v, rate in ((0, 0.3), (1, 0.75)):
                k = round(rate * 400)
                yhat.append(rng.permutation(np.r_[np.ones(k, int), np.zeros(400 - k, int)]))
                lab.append(np.full(400, v))
                grp.append(np.full(400, g))
        mix = fit_eq_odds(np.concatenate(yhat), np.concatenate(lab), np.concatenate(grp))
        results["d"] = mix.p_keep_pos == (1.0, 1.0) and mix.p_keep_neg == (1.0, 1.0)

        # (e) eta = 0 regularizer follows the baseline trajectory step for step
        base_hist, pi_hist = [], []
        params = LogisticParams(max_epochs=150)
        train_logistic(sample, params, history=base_hist)
        train_pi_regularized(sample, "a1", params, eta=0.0, history=pi_hist)
        results["e"] = len(base_hist) == len(pi_hist) and all(
            np.array_equal(b["theta"], p["theta"]) for b, p in zip(base_hist, pi_hist))
    ok = all(results.values()) and clock.seconds < 10.0
    detail = ", ".join(f"({k}) {'ok' if v else 'broken'}" for k, v in results.items())
    record(6, "processor fixed points", ok, detail, clock.seconds, 10)
    assert all(results.values()), results
    assert clock.seconds < 10.0


# --------------------------------------------------------------------------
# 7. equalized odds against grid search


def test_c07_eq_odds_oracle():
    worst = 0.0
    with Clock() as clock:
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            n = int(rng.integers(200, 1200))
            yhat, lab, grp = [], [], []
            for g in (0, 1):
                fpr, tpr = rng.uniform(0.02, 0.98, 2)
                for v, rate in ((0, fpr), (1, tpr)):
                    m = int(rng.integers(n // 2, n))
                    k = int(round(rate * m))
                    yhat.append(rng.permutation(np.r_[np.ones(k, int), np.zeros(m - k, int)]))
                    lab.append(np.full(m, v))
                    grp.append(np.full(m, g))
            yhat, lab, grp = map(np.concatenate, (yhat, lab, grp))
            mix = fit_eq_odds(yhat, lab, grp)
            points, mass = group_roc_points(yhat, lab, grp)
            target, loss = eq_odds_grid_search(points, mass, 1e-3)
            worst = max(worst, abs(mix.expected_loss - loss), *np.abs(np.subtract(mix.target, target)))
    ok = worst <= 2e-3 and clock.seconds < 30.0
    record(7, "equalized-odds oracle", ok, f"max deviation {worst:.1e} on 10 classifiers (tol 2e-3)",
           clock.seconds, 30)
    assert worst <= 2e-3
    assert clock.seconds < 30.0


# --------------------------------------------------------------------------
# 8. meta-fair against exhaustive search


def test_c08_metafair_oracle():
    mismatches, cases = 0, 0
    grid0, grid1 = np.linspace(0.0, 0.9, 5), np.linspace(0.05, 0.95, 5)
    with Clock() as clock:
        for seed in range(10):
            rng = np.random.default_rng(seed)
            scores = np.round(rng.random(8), 3)
            label = np.r_[0, 1, 0, 1, rng.integers(0, 2, 4)]
            group = np.r_[0, 0, 1, 1, rng.integers(0, 2, 4)]
            for metric in ("independence", "equal_opportunity", "separation", "sufficiency"):
                t0, t1, info = solve_group_thresholds(scores, label, group, np.ones(8), metric, 0.8, grid0, grid1)
                e0, e1, feasible = brute_metafair(list(scores), list(label), list(group), metric, 0.8,
                                                  list(grid0), list(grid1))
                mismatches += (t0, t1) != (e0, e1) or info["feasible"] != feasible
                cases += 1
    ok = mismatches == 0 and clock.seconds < 5.0
    record(8, "meta-fair oracle", ok, f"{mismatches} mismatches in {cases} cases (4 metrics, 5x5 grids)",
           clock.seconds, 5)
    assert mismatches == 0
    assert clock.seconds < 5.0


# --------------------------------------------------------------------------
# 9. desk-scale simulation study


@pytest.fixture(scope="module")
def simulation_study(tmp_path_factory):
    cfg = ExperimentConfig(simulation=SimConfig(n=5000, replicates=50))
    with Clock() as clock:
        result = run_experiment(cfg, out_dir=tmp_path_factory.mktemp("simulation_study"))
    return result, clock.seconds


def test_c09_simulation_study(simulation_study):
    result, seconds = simulation_study
    sps = [(r.sp, sc, r.pipeline.pipeline_id) for sc, reps in result.reports.items() for r in reps]
    undefined = [s for s in sps if s[0] is None]
    worst_sp = max(s for s in sps if s[0] is not None)
    ok_a = not undefined and worst_sp[0] <= 0.10

    improved = []
    for scenario, reps in result.reports.items():
        acc = {r.pipeline.pipeline_id: r.accuracy for r in reps}
        for r in reps:
            spec = r.pipeline
            if spec.combination == "PI":
                parts = (acc[spec.pre], acc[spec.in_])
                if None not in parts and acc[spec.pipeline_id] is not None and acc[spec.pipeline_id] > max(parts):
                    improved.append(f"{scenario}/{spec.pipeline_id}")
    ok_b = bool(improved)

    combo = result.report("or", "diremover+metafair")
    best = max(r.accuracy for r in result.reports["or"] if r.accuracy is not None)
    ok_c = combo.sp is not None and combo.sp <= 0.05 and best - combo.accuracy <= 0.10

    ok = ok_a and ok_b and ok_c and seconds < 20 * 60
    detail = (f"(a) max median SP {worst_sp[0]:.3f} at {worst_sp[1]}/{worst_sp[2]}; "
              f"(b) {len(improved)} PI pipelines beat both parts, e.g. {improved[:2]}; "
              f"(c) OR diremover+metafair SP {combo.sp:.3f}, accuracy {combo.accuracy:.3f} vs grid max {best:.3f}")
    record(9, "simulation study", ok, detail, seconds, 1200)
    assert ok_a, worst_sp
    assert ok_b
    assert ok_c
    assert seconds < 20 * 60


# --------------------------------------------------------------------------
# 10. Pareto frontier and report round trip


def test_c10_pareto_and_reporting(tmp_path):
    with Clock() as clock:
        cfg = ExperimentConfig(dataset="german", german=GermanConfig(path=GERMAN_PATH), scenarios=("single",))
        result = run_experiment(cfg, out_dir=tmp_path / "a")
        reports = result.reports["single"]
        front = pareto_frontier(reports)
        mutual = all(not dominates(p, q) for p in front for q in front)
        defined = [r for r in reports if r.accuracy is not None and r.sp is not None]
        best_acc = max(r.accuracy for r in defined)
        best_sp = min(r.sp for r in defined)
        has_extremes = (any(p.accuracy == best_acc for p in front)
                        and any(p.separation == best_sp for p in front))

        out = tmp_path / "a"
        summary_ok = all(
            row["pipeline"] == r.pipeline.pipeline_id and all(row[m] == r.metric(m) for m in harness.REPORT_FIELDS)
            for row, r in zip(read_summary(out / "summary_single.csv"), reports))
        matrices_ok = True
        for metric in harness.METRICS:
            axis, cells = read_matrix(out / f"matrix_{metric}_single.csv")
            exp_axis, exp_cells = result_matrix(reports, cfg, metric)
            matrices_ok &= axis == exp_axis and cells == exp_cells
            graph = json.loads((out / f"graph_{metric}_single.json").read_text())
            by_id = {r.pipeline.pipeline_id: r.metric(metric) for r in reports}
            matrices_ok &= all(node["value"] == by_id[node["id"]] for node in graph["nodes"])
        pareto_ok = read_pareto(out / "pareto_single.csv") == front
        meta = json.loads((out / "run_metadata.json").read_text())
        run_experiment(ExperimentConfig.from_dict(meta["config"]), out_dir=tmp_path / "b")
        rerun_ok = snapshot(out) == snapshot(tmp_path / "b")
    checks = {"non-dominated": mutual, "extremes": has_extremes, "summary": summary_ok, "matrices": matrices_ok,
              "pareto file": pareto_ok, "config reconstruction": rerun_ok}
    ok = all(checks.values()) and clock.seconds < 600
    detail = f"{len(front)} frontier points of {len(reports)}; " + ", ".join(
        f"{k} {'ok' if v else 'broken'}" for k, v in checks.items())
    record(10, "Pareto and reporting", ok, detail, clock.seconds, 600)
    assert all(checks.values()), checks
    assert clock.seconds < 600


# --------------------------------------------------------------------------
# 11. determinism across parallelism


def test_c11_determinism(tmp_path):
    configs = {
        "german": ExperimentConfig(dataset="german", german=GermanConfig(path=GERMAN_PATH)),
        "simulation": ExperimentConfig(simulation=SimConfig(n=1000, replicates=4, seed=5)),
    }
    identical = {}
    with Clock() as clock:
        for name, cfg in configs.items():
            dirs = []
            for run, par in enumerate((1, 8, 1)):
                out = tmp_path / f"{name}_{run}_p{par}"
                run_experiment(ExperimentConfig(**{**cfg.__dict__, "parallelism": par}), out_dir=out)
                dirs.append(snapshot(out))
            identical[name] = dirs[0] == dirs[1] == dirs[2]
    ok = all(identical.values())
    detail = ", ".join(f"{k} {'byte-identical' if v else 'DIFFERS'}" for k, v in identical.items())
    record(11, "determinism", ok, f"{detail} (runs at parallelism 1, 8, 1)", clock.seconds)
    assert ok, identical
