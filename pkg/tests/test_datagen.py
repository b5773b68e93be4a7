"""Tests for the synthetic data generators and CSV ingestion."""

import numpy as np
import pytest

from predopt import datagen
from predopt.datagen import (
    DataError,
    KnapsackGenParams,
    LogitGenParams,
    PortfolioCsvSchema,
    child_seed,
    class_probs,
    gen_knapsack_data,
    gen_knapsack_instance,
    gen_multiclass_data,
    gen_portfolio_synthetic,
    load_knapsack_instance,
    load_portfolio_window,
    save_knapsack_instance,
)


class TestSeeding:
    def test_child_seeds_differ_by_rep(self):
        a = np.random.default_rng(child_seed(0, 0)).random(4)
        b = np.random.default_rng(child_seed(0, 1)).random(4)
        assert not np.allclose(a, b)

    def test_child_seeds_reproducible(self):
        a = np.random.default_rng(child_seed(7, 3)).random(4)
        b = np.random.default_rng(child_seed(7, 3)).random(4)
        assert np.array_equal(a, b)


class TestKnapsackInstance:
    def test_capacity_within_bounds(self):
        for seed in range(200):
            dom = gen_knapsack_instance(5, seed)
            assert dom.p.max() <= dom.B <= dom.p.sum()
            assert np.all(dom.p >= 1) and np.all(dom.p <= 1000)
            assert dom.p == pytest.approx(np.round(dom.p))

    def test_deterministic(self):
        a = gen_knapsack_instance(6, 3)
        b = gen_knapsack_instance(6, 3)
        assert np.array_equal(a.p, b.p) and a.B == b.B

    def test_capacity_mean_in_analytic_range(self):
        # B ~ U{l..u} with u = r*l + sum(p) - l; over many draws the mean of
        # B must sit between l and (l + sum(p))/2 plus slack.
        seeds = range(2000)
        vals = []
        for s in seeds:
            dom = gen_knapsack_instance(4, s)
            l = dom.p.max()
            vals.append((dom.B - l) / max(dom.p.sum() - l, 1.0))
        frac = np.mean(vals)
        # E[(B-l)/(sum-l)] = E[(r*l + sum - 2l)/(2(sum-l))]; with m=4 weights
        # uniform on [1,1000] this sits near (sum - 1.5 l)/(2(sum - l)) ~ 0.33.
        assert 0.25 <= frac <= 0.40

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            gen_knapsack_instance(0, 0)


class TestKnapsackData:
    def test_params_validate(self):
        with pytest.raises(ValueError):
            KnapsackGenParams(m=2, k=2, delta=2)
        with pytest.raises(ValueError):
            KnapsackGenParams(m=2, k=2, eps_bar=1.0)

    def test_exact_recovery_mode(self):
        params = KnapsackGenParams(m=3, k=4, delta=1, eps_bar=0.0, seed=0, noise=False)
        V0 = np.random.default_rng(0).normal(size=(3, 4))
        W, C = gen_knapsack_data(params, V0, 50)
        assert np.allclose(C, W @ V0.T, atol=1e-12)
        assert np.all(W[:, -1] == 1.0)
        assert np.all(np.abs(W[:, :-1]) <= 1.0)

    def test_conditional_mean_matches_link(self):
        params = KnapsackGenParams(m=2, k=3, delta=3, eps_bar=0.2, seed=1, noise=True)
        V0 = np.array([[0.5, -0.3, 0.2], [0.1, 0.4, -0.2]])
        # Many independent draws at the same features via fresh seeds.
        n = 100_000
        W, C = gen_knapsack_data(params, V0, n)
        base = (W @ V0.T) ** 3
        resid = C - base
        se = resid.std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(resid.mean(axis=0)) <= 3 * se + 1e-12)

    def test_noise_term_zero_mean(self):
        rng = np.random.default_rng(2)
        eta = (rng.exponential(1.0, size=100_000) - 1.0) / 2.0
        assert abs(eta.mean()) <= 3 * eta.std() / np.sqrt(eta.size)

    def test_shape_validation(self):
        params = KnapsackGenParams(m=2, k=2)
        with pytest.raises(ValueError):
            gen_knapsack_data(params, np.zeros((3, 2)), 10)

    def test_deterministic(self):
        params = KnapsackGenParams(m=2, k=2, seed=5)
        V0 = np.ones((2, 2))
        W1, C1 = gen_knapsack_data(params, V0, 20)
        W2, C2 = gen_knapsack_data(params, V0, 20)
        assert np.array_equal(W1, W2) and np.array_equal(C1, C2)


class TestMulticlass:
    def test_identical_rows_give_uniform_probabilities(self):
        V = np.ones((3, 2))
        params = LogitGenParams(m=3, k=2, V_true=V)
        P = class_probs(params, np.random.default_rng(0).uniform(size=(10, 2)))
        assert np.allclose(P, 1.0 / 3.0)

    def test_probabilities_sum_to_one(self):
        params = LogitGenParams(m=4, k=3, seed=0)
        data = gen_multiclass_data(params, 200)
        assert np.allclose(data.probs.sum(axis=1), 1.0, atol=1e-12)

    def test_cost_rows_are_class_indicators(self):
        params = LogitGenParams(m=4, k=3, seed=1)
        data = gen_multiclass_data(params, 100)
        assert np.all(data.C.sum(axis=1) == 3.0)
        assert np.all(data.C[np.arange(100), data.labels] == 0.0)

    def test_empirical_frequencies_match_probabilities(self):
        V = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        params = LogitGenParams(m=3, k=2, V_true=V)
        w = np.array([0.3, 0.7])
        p = class_probs(params, w[None, :])[0]
        rng = np.random.default_rng(3)
        n = 100_000
        u = rng.random(n)
        draws = (u[:, None] > np.cumsum(p)[None, :]).sum(axis=1)
        freq = np.bincount(draws, minlength=3) / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= 3 * se + 1e-12)

    def test_v_true_shape_checked(self):
        with pytest.raises(ValueError):
            LogitGenParams(m=2, k=2, V_true=np.zeros((3, 2)))


def _write_portfolio_csvs(tmp_path, dates, tickers, R, F):
    rets = tmp_path / "returns.csv"
    facs = tmp_path / "factors.csv"
    lines = ["date,ticker,return"]
    for i, d in enumerate(dates):
        for j, t in enumerate(tickers):
            if not np.isnan(R[i, j]):
                lines.append(f"{d},{t},{R[i, j]}")
    rets.write_text("\n".join(lines) + "\n")
    lines = ["date," + ",".join(f"f{j+1}" for j in range(F.shape[1]))]
    for i, d in enumerate(dates):
        lines.append(d + "," + ",".join(str(v) for v in F[i]))
    facs.write_text("\n".join(lines) + "\n")
    return PortfolioCsvSchema(str(rets), str(facs))


class TestPortfolioCsv:
    dates = [f"2024-01-{d:02d}" for d in range(1, 7)]
    tickers = ["AAA", "BBB"]

    def test_hand_computed_covariance(self, tmp_path):
        R = np.array([[0.01, 0.02], [0.03, -0.01], [0.02, 0.04],
                      [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        F = np.arange(12, dtype=float).reshape(6, 2)
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        data = load_portfolio_window(schema, self.tickers, window=3, horizon=2)
        assert np.allclose(data.Q, np.cov(R[:3], rowvar=False, ddof=1))
        assert np.all(data.W_train[:, -1] == 1.0)
        assert data.W_train.shape == (3, 3)
        assert np.array_equal(data.C_test, R[3:5])

    def test_constant_returns_get_jitter(self, tmp_path):
        R = np.full((6, 2), 0.01)
        F = np.zeros((6, 2))
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        data = load_portfolio_window(schema, self.tickers, window=3, horizon=1)
        assert data.jitter_applied
        assert np.linalg.eigvalsh(data.Q).min() > 0

    def test_ticker_order_permutes_consistently(self, tmp_path):
        rng = np.random.default_rng(0)
        R = rng.normal(size=(6, 2))
        F = rng.normal(size=(6, 2))
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        a = load_portfolio_window(schema, ["AAA", "BBB"], window=4, horizon=1)
        b = load_portfolio_window(schema, ["BBB", "AAA"], window=4, horizon=1)
        assert np.allclose(a.Q, b.Q[np.ix_([1, 0], [1, 0])])

    def test_missing_cell_names_date_and_ticker(self, tmp_path):
        R = np.random.default_rng(1).normal(size=(6, 2))
        R[2, 1] = np.nan
        F = np.zeros((6, 2))
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        with pytest.raises(DataError, match="2024-01-03.*BBB"):
            load_portfolio_window(schema, self.tickers, window=4, horizon=1)

    def test_short_file_rejected(self, tmp_path):
        R = np.zeros((6, 2))
        F = np.zeros((6, 2))
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        with pytest.raises(DataError):
            load_portfolio_window(schema, self.tickers, window=6, horizon=2)

    def test_unknown_ticker_rejected(self, tmp_path):
        R = np.zeros((6, 2))
        F = np.zeros((6, 2))
        schema = _write_portfolio_csvs(tmp_path, self.dates, self.tickers, R, F)
        with pytest.raises(DataError, match="CCC"):
            load_portfolio_window(schema, ["AAA", "CCC"], window=3, horizon=1)


class TestPortfolioSynthetic:
    def test_deterministic(self):
        a = gen_portfolio_synthetic(3, 3, 50, 9)
        b = gen_portfolio_synthetic(3, 3, 50, 9)
        assert np.array_equal(a.C_train, b.C_train)
        assert np.array_equal(a.W_test, b.W_test)

    def test_covariance_symmetric_pd(self):
        data = gen_portfolio_synthetic(4, 3, 100, 0)
        assert np.allclose(data.Q, data.Q.T)
        assert np.linalg.eigvalsh(data.Q).min() > 0

    def test_linear_model_recoverable(self):
        from predopt.predictor import fit_least_squares

        data = gen_portfolio_synthetic(3, 3, 10_000, 1)
        pred, _ = fit_least_squares((data.W_train, data.C_train))
        assert np.linalg.norm(pred.V - data.V_true) <= 0.1


class TestInstanceDump:
    def test_round_trip(self, tmp_path):
        dom = gen_knapsack_instance(5, 11)
        path = tmp_path / "inst.csv"
        save_knapsack_instance(dom, path)
        back = load_knapsack_instance(path)
        assert np.array_equal(back.p, dom.p) and back.B == dom.B
