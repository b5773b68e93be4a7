"""End-to-end acceptance suite.

Each test covers one numbered acceptance criterion and prints a single
pass/fail line (visible with ``pytest -s`` or on failure).
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from predopt.domains import (
    IntervalDomain,
    KnapsackDomain,
    PortfolioDomain,
    SimplexDomain,
)
from predopt import cli, harness, oracle
from predopt.diagnostics import (
    check_risk_bound,
    multiclass_spo_minimizer,
    prop1_density,
    spo_1d_population_minimizer,
)
from predopt.harness import ExperimentConfig, run_experiment
from predopt.losses import RegGapParams, SquaredLoss, reg_gap_loss, spo_plus_loss
from predopt.predictor import (
    LinearPredictor,
    TrainOptions,
    fit_erm_first_order,
    fit_least_squares,
)


def _report(number, description, body):
    try:
        body()
    except BaseException:
        print(f"criterion {number:2d} ({description}): FAIL")
        raise
    print(f"criterion {number:2d} ({description}): PASS")


def test_criterion_01_oracle_equivalence():
    def body():
        t0 = time.perf_counter()
        rng = np.random.default_rng(101)
        for _ in range(200):
            m = int(rng.integers(1, 7))
            p = rng.uniform(0.2, 3.0, m)
            B = float(rng.uniform(p.max(), p.sum()))
            d = rng.normal(0, 2, m)
            dom = KnapsackDomain(p=p, B=B)
            sol = oracle.solve_knapsack(dom, d)
            best = max(float(d @ v) for v in dom.vertices())
            assert abs(sol.objective - best) <= 1e-9
        hits = 0
        while hits < 50:
            m = int(rng.integers(2, 6))
            A = rng.normal(size=(m, m))
            Q = A @ A.T + 0.5 * np.eye(m)
            p = rng.uniform(0.5, 2.0, m)
            b = float(rng.uniform(0.5, 2.0))
            d = rng.normal(size=m)
            eq = PortfolioDomain(Q=Q, p=p, b=b, nonneg=False)
            x_eq = oracle.solve_portfolio_eq(eq, d).x
            if x_eq.min() < 1e-6:
                continue
            hits += 1
            pos = PortfolioDomain(Q=Q, p=p, b=b, nonneg=True)
            x_qp = oracle.solve_portfolio_qp(pos, d).x
            assert np.abs(x_qp - x_eq).max() <= 1e-6
        assert time.perf_counter() - t0 < 10.0

    _report(1, "oracle equivalence", body)


def test_criterion_02_portfolio_surrogate_identity():
    def body():
        rng = np.random.default_rng(102)
        for _ in range(500):
            m = int(rng.integers(2, 6))
            A = rng.normal(size=(m, m))
            dom = PortfolioDomain(
                Q=A @ A.T + 0.3 * np.eye(m),
                p=rng.uniform(0.5, 2.0, m),
                b=float(rng.uniform(0.5, 2.0)),
                nonneg=False,
            )
            d = rng.normal(size=m)
            c = rng.normal(size=m)
            L = oracle.portfolio_eq_true_loss(dom, d, c)
            assert abs(spo_plus_loss(dom, d, c).value - 4.0 * L) <= 1e-8

    _report(2, "equality-portfolio surrogate = 4x true loss", body)


def test_criterion_03_squared_loss_risk_bound():
    def body():
        t0 = time.perf_counter()
        rng = np.random.default_rng(103)
        for _ in range(100):
            m = int(rng.integers(2, 5))
            dist = harness.random_multiclass_dist(rng, m)
            dom = SimplexDomain(m)
            for _ in range(100):
                pred = LinearPredictor(V=rng.normal(size=(m, 2)))
                rep = check_risk_bound(dist, dom, pred, "squared")
                assert rep.satisfied, rep
        assert time.perf_counter() - t0 < 60.0

    _report(3, "squared excess-risk bound, 100x100 trials", body)


def test_criterion_04_margin_risk_bound():
    def body():
        rng = np.random.default_rng(104)
        alpha = 0.25
        for _ in range(50):
            dist = harness.random_margin_dist(rng, alpha)
            pred = LinearPredictor(V=rng.normal(size=(1, 1)))
            rep = check_risk_bound(
                dist, IntervalDomain(), pred, "spo_margin", alpha=alpha
            )
            assert rep.satisfied, rep

    _report(4, "margin excess-risk bound, 50 one-dim trials", body)


def test_criterion_05_multiclass_inconsistency():
    def body():
        rng = np.random.default_rng(105)
        no_majority = 0
        while no_majority < 100:
            m = int(rng.integers(2, 6))
            p = rng.dirichlet(np.ones(m))
            out = multiclass_spo_minimizer(p)
            if p.max() < 0.5:
                no_majority += 1
                assert out.is_constant_optimal
                assert abs(out.value - 1.0) <= 1e-9
            elif p.max() > 0.5:
                assert abs(out.value - 2.0 * (1.0 - p.max())) <= 1e-9

    _report(5, "multiclass surrogate minimizer structure", body)


def test_criterion_06_one_dim_inconsistency_witness():
    def body():
        out = spo_1d_population_minimizer([-1.0, -1.0, 4.0], [1 / 3, 1 / 3, 1 / 3])
        assert out.sign_d == -1
        mean = (-1.0 - 1.0 + 4.0) / 3.0
        assert mean == pytest.approx(2.0 / 3.0)
        assert out.sign_mean == 1
        # The population objective's minimizing kink is at -1/2.
        assert abs(out.d_star - (-0.5)) <= 1e-8

    _report(6, "one-dim sign-flip witness", body)


def test_criterion_07_counterexample_densities():
    def body():
        z = 2.0 * stats.norm.cdf(-1.0)
        margins = []
        for k in (1, 10, 100):
            den = prop1_density(1.0, k)
            assert abs(den.total_mass() - 1.0) <= 1e-6
            assert abs(den.mean() - 1.0) <= 1e-6
            assert abs(den.margin() - (1.0 - z) / k) <= 1e-6
            margins.append(den.margin())
        assert margins[0] > margins[1] > margins[2]

    _report(7, "density family mass/mean/margin", body)


def test_criterion_08_training_equivalence_and_gradients():
    def body():
        rng = np.random.default_rng(108)
        opts = TrainOptions(steps=40000, probe_steps=800)
        for _ in range(20):
            n = int(rng.integers(20, 201))
            k = int(rng.integers(1, 11))
            m = int(rng.integers(1, 11))
            W = rng.normal(size=(n, k))
            C = rng.normal(size=(n, m))
            _, rep_ls = fit_least_squares((W, C))
            _, rep = fit_erm_first_order((W, C), SquaredLoss(), opts)
            assert rep.final_objective - rep_ls.final_objective <= 1e-6

        h = 1e-6
        checked = 0
        while checked < 100:
            m = int(rng.integers(2, 6))
            p = rng.uniform(0.5, 2.0, m)
            dom = KnapsackDomain(p=p, B=float(rng.uniform(p.max(), p.sum())))
            d = rng.normal(0, 1.5, m)
            c = rng.normal(0, 1.0, m)
            params = RegGapParams(float(rng.uniform(0.3, 1.5)))
            out = reg_gap_loss(dom, params, d, c)
            if out.at_breakpoint:
                continue
            checked += 1
            for j in range(m):
                e = np.zeros(m)
                e[j] = h
                fd = (
                    reg_gap_loss(dom, params, d + e, c).value
                    - reg_gap_loss(dom, params, d - e, c).value
                ) / (2 * h)
                assert abs(out.subgrad[j] - fd) <= 1e-4

    _report(8, "first-order training and implicit gradients", body)


def test_criterion_09_multiclass_study_ordering():
    def body():
        t0 = time.perf_counter()
        cfg = ExperimentConfig(
            study="multiclass", m=4, k=4, n_list=(100, 300, 1000), reps=20,
            losses=("ls", "spo_plus"), seed=109, test_points=20000, steps=800,
        )
        rows = run_experiment(cfg)
        by = {}
        for r in rows:
            by.setdefault((r.loss, r.n), []).append(r.value)
        ls_1000 = np.mean(by[("ls", 1000)])
        spo_1000 = np.mean(by[("spo_plus", 1000)])
        assert ls_1000 < spo_1000
        ns, gaps = [], []
        for n in cfg.n_list:
            for v in by[("spo_plus", n)]:
                ns.append(n)
                gaps.append(v)
        res = stats.spearmanr(ns, gaps, alternative="less")
        assert not (res.statistic < 0 and res.pvalue < 0.05)
        assert time.perf_counter() - t0 < 600.0

    _report(9, "multiclass study qualitative ordering", body)


def test_criterion_10_knapsack_study_ordering():
    def body():
        t0 = time.perf_counter()

        def gaps_by_instance(delta):
            cfg = ExperimentConfig(
                study="knapsack", m=10, k=5, n_list=(100, 300, 500), reps=10,
                losses=("ls", "spo_plus"), seed=110, delta=delta,
                test_size=2000, steps=800,
            )
            rows = run_experiment(cfg)
            # Per-instance gap averaged over the training-size grid.
            ls = {
                i: np.mean([r.value for r in rows if r.loss == "ls" and r.rep == i])
                for i in range(cfg.reps)
            }
            spo = {
                i: np.mean(
                    [r.value for r in rows if r.loss == "spo_plus" and r.rep == i]
                )
                for i in range(cfg.reps)
            }
            return ls, spo

        ls5, spo5 = gaps_by_instance(5)
        wins = sum(spo5[i] <= ls5[i] for i in range(10))
        assert wins >= 7

        ls1, spo1 = gaps_by_instance(1)
        diff = abs(np.mean(list(spo1.values())) - np.mean(list(ls1.values())))
        assert diff <= 0.02
        assert time.perf_counter() - t0 < 900.0

    _report(10, "knapsack study qualitative ordering", body)


def test_criterion_11_cli_determinism(tmp_path):
    def body():
        cfg = {
            "study": "knapsack", "m": 5, "k": 3, "n_list": [60], "reps": 2,
            "losses": ["ls", "spo_plus", "reg_gap"], "steps": 100, "seed": 7,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli.main(
                ["run", "--config", str(cfg_path), "--out", str(out)]
            ) == 0
            outputs.append((out / "results.csv").read_bytes())
        assert outputs[0] == outputs[1]

    _report(11, "fixed-seed CLI runs byte-identical", body)
