"""Experiment harness: configuration, study runners, metrics, CSV output.

Each repetition owns an independent seed derived from the experiment seed by
the documented splitting rule, so runs are deterministic and rows do not
depend on execution order.  The results CSV deliberately omits wall-clock
time (kept in the in-memory rows and the summary) so that fixed-seed runs
are byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .domains import IntervalDomain, KnapsackDomain, PortfolioDomain, SimplexDomain
from . import datagen, diagnostics, losses, oracle
from .datagen import DataError
from .losses import AbsDevLoss, RegGapLoss, RegGapParams, SpoPlusLoss, SquaredLoss
from .predictor import LinearPredictor, TrainOptions, fit_erm_first_order, fit_least_squares


class ConfigError(ValueError):
    """Raised when an experiment configuration is invalid."""


_STUDIES = ("portfolio", "knapsack", "multiclass", "diagnostics")
_LOSSES = ("ls", "absdev", "spo_plus", "reg_gap")


@dataclass
class ExperimentConfig:
    """Configuration mirrored by the TOML/JSON config file."""

    study: str
    m: int = 4
    k: int = 4
    n_list: tuple = (100,)
    reps: int = 1
    losses: tuple = ("ls", "spo_plus")
    seed: int = 0
    out_dir: str = "."
    steps: int = 800
    # knapsack study
    delta: int = 1
    eps_bar: float = 0.1
    lam: float = 0.01
    noise: bool = True
    test_size: int = 2000
    # multiclass study
    test_points: int = 20000
    # portfolio study
    horizon: int = 10
    returns_csv: str | None = None
    factors_csv: str | None = None
    tickers: tuple = ()

    def __post_init__(self):
        if self.study not in _STUDIES:
            raise ConfigError(f"unknown study {self.study!r}")
        self.n_list = tuple(int(n) for n in self.n_list)
        self.losses = tuple(self.losses)
        self.tickers = tuple(self.tickers)
        for n in self.n_list:
            if n < 1:
                raise ConfigError("training sizes must be positive")
        if self.m < 1 or self.k < 1 or self.reps < 1 or self.steps < 1:
            raise ConfigError("sizes must be positive")
        for name in self.losses:
            if name not in _LOSSES:
                raise ConfigError(f"unknown loss {name!r} (choose from {_LOSSES})")
        if self.study == "multiclass" and self.m < 2:
            raise ConfigError("multiclass study needs m >= 2")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "study" not in raw:
            raise ConfigError("config must set 'study'")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ResultRow:
    study: str
    loss: str
    m: int
    k: int
    n: int
    rep: int
    metric: str
    value: float
    wall_time: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("metric value must be finite")


def _rep_rng(seed: int, rep: int, sub: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(rep, sub))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def eval_multiclass(V, W_test, probs):
    """Expected true loss under exact class probabilities, Bayes loss, and
    the gap relative to Bayes.

    Ties in the predicted argmin average the probabilities over the argmin
    set.
    """
    if isinstance(V, LinearPredictor):
        V = V.V
    W_test = np.asarray(W_test, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if len(W_test) == 0:
        raise ValueError("empty test set")
    D = W_test @ np.asarray(V, dtype=float).T
    mins = D.min(axis=1, keepdims=True)
    ties = D <= mins + 1e-9
    picked = np.sum(probs * ties, axis=1) / ties.sum(axis=1)
    expected = float(np.mean(1.0 - picked))
    bayes = float(np.mean(1.0 - probs.max(axis=1)))
    rel = (expected - bayes) / bayes if bayes > 0 else 0.0
    return expected, bayes, float(rel)


@dataclass(frozen=True)
class GapResult:
    value: float
    excluded: int = 0


def eval_optimality_gap(dom, V, test_pairs, mode: str) -> GapResult:
    """Aggregated decision regret on test pairs.

    mode="median-absolute": median of L(Vw, c).
    mode="mean-relative": mean of c^T(x*(c) - x*(d)) / c^T x*(c); points
    with nonpositive optimal value are excluded and counted.
    """
    W, C = test_pairs
    if isinstance(V, LinearPredictor):
        D = V.predict_batch(W)
    else:
        D = np.asarray(W, float) @ np.asarray(V, float).T
    gaps = losses.true_loss_batch(dom, D, C)
    if mode == "median-absolute":
        return GapResult(value=float(np.median(gaps)))
    if mode == "mean-relative":
        XC = oracle.solve_batch(dom, C)
        s = -1.0 if dom.reward_oriented else 1.0
        denom = -s * np.sum(np.asarray(C, float) * XC, axis=1)
        ok = denom > 0
        if not np.any(ok):
            raise ValueError("no test point with positive optimal value")
        return GapResult(
            value=float(np.mean(gaps[ok] / denom[ok])), excluded=int(np.sum(~ok))
        )
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Study runners
# ---------------------------------------------------------------------------

def _make_trainer(name, dom, cfg, steps=None):
    steps = steps or cfg.steps

    def train(W, C):
        if name == "ls":
            return fit_least_squares((W, C))
        V0 = None
        if name == "absdev":
            loss = AbsDevLoss()
        elif name == "spo_plus":
            loss = SpoPlusLoss(dom)
        elif name == "reg_gap":
            loss = RegGapLoss(dom, RegGapParams(cfg.lam))
            # At V=0 every training point sits on a kink of the regularized
            # solution map and the subgradient vanishes; start from the
            # least-squares fit instead.
            V0 = fit_least_squares((W, C))[0].V
        else:
            raise ConfigError(f"unknown loss {name!r}")
        return fit_erm_first_order(
            (W, C), loss, TrainOptions(steps=steps, seed=cfg.seed), V0=V0
        )

    return train


def _run_multiclass(cfg: ExperimentConfig):
    rows = []
    for rep in range(cfg.reps):
        # Each repetition draws its own true coefficient matrix and test
        # features.
        rng = np.random.default_rng(_rep_rng(cfg.seed, rep, 0))
        params = datagen.LogitGenParams(
            m=cfg.m, k=cfg.k, V_true=rng.normal(size=(cfg.m, cfg.k))
        )
        W_test = rng.uniform(0.0, 1.0, size=(cfg.test_points, cfg.k))
        P_test = datagen.class_probs(params, W_test)
        dom = SimplexDomain(cfg.m)
        for ni, n in enumerate(cfg.n_list):
            rng_n = np.random.default_rng(_rep_rng(cfg.seed, rep, 1 + ni))
            W = rng_n.uniform(0.0, 1.0, size=(n, cfg.k))
            P = datagen.class_probs(params, W)
            u = rng_n.random(n)
            labels = np.minimum(
                (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1), cfg.m - 1
            )
            C = 1.0 - np.eye(cfg.m)[labels]
            for loss_name in cfg.losses:
                t0 = time.perf_counter()
                pred, _ = _make_trainer(loss_name, dom, cfg)(W, C)
                _, _, rel = eval_multiclass(pred, W_test, P_test)
                rows.append(
                    ResultRow(
                        study="multiclass", loss=loss_name, m=cfg.m, k=cfg.k,
                        n=n, rep=rep, metric="rel_bayes_gap", value=rel,
                        wall_time=time.perf_counter() - t0,
                    )
                )
    return rows


def _run_knapsack(cfg: ExperimentConfig):
    rows = []
    for rep in range(cfg.reps):
        inst_rng = np.random.default_rng(_rep_rng(cfg.seed, rep, 0))
        dom = datagen.gen_knapsack_instance(cfg.m, inst_rng)
        V0 = inst_rng.normal(size=(cfg.m, cfg.k))
        test_params = datagen.KnapsackGenParams(
            m=cfg.m, k=cfg.k, delta=cfg.delta, eps_bar=cfg.eps_bar,
            seed=_rep_rng(cfg.seed, rep, 1), noise=cfg.noise,
        )
        W_test, C_test = datagen.gen_knapsack_data(test_params, V0, cfg.test_size)
        for ni, n in enumerate(cfg.n_list):
            train_params = datagen.KnapsackGenParams(
                m=cfg.m, k=cfg.k, delta=cfg.delta, eps_bar=cfg.eps_bar,
                seed=_rep_rng(cfg.seed, rep, 2 + ni), noise=cfg.noise,
            )
            W, C = datagen.gen_knapsack_data(train_params, V0, n)
            for loss_name in cfg.losses:
                t0 = time.perf_counter()
                pred, _ = _make_trainer(loss_name, dom, cfg)(W, C)
                gap = eval_optimality_gap(
                    dom, pred, (W_test, C_test), "mean-relative"
                )
                rows.append(
                    ResultRow(
                        study="knapsack", loss=loss_name, m=cfg.m, k=cfg.k,
                        n=n, rep=rep, metric="mean_rel_gap", value=gap.value,
                        wall_time=time.perf_counter() - t0,
                    )
                )
    return rows


def _run_portfolio(cfg: ExperimentConfig):
    rows = []
    use_csv = cfg.returns_csv is not None
    for rep in range(cfg.reps):
        for ni, n in enumerate(cfg.n_list):
            if use_csv:
                schema = datagen.PortfolioCsvSchema(cfg.returns_csv, cfg.factors_csv)
                data = datagen.load_portfolio_window(
                    schema, cfg.tickers, window=n, horizon=cfg.horizon, start=rep
                )
            else:
                data = datagen.gen_portfolio_synthetic(
                    cfg.m, cfg.k, n,
                    _rep_rng(cfg.seed, rep, ni), horizon=cfg.horizon,
                )
            m = data.C_train.shape[1]
            dom = PortfolioDomain(
                Q=data.Q, p=np.ones(m), b=1.0, nonneg=True
            )
            for loss_name in cfg.losses:
                t0 = time.perf_counter()
                pred, _ = _make_trainer(loss_name, dom, cfg)(
                    data.W_train, data.C_train
                )
                gap = eval_optimality_gap(
                    dom, pred, (data.W_test, data.C_test), "median-absolute"
                )
                rows.append(
                    ResultRow(
                        study="portfolio", loss=loss_name, m=m,
                        k=data.W_train.shape[1], n=n, rep=rep,
                        metric="median_gap", value=gap.value,
                        wall_time=time.perf_counter() - t0,
                    )
                )
    return rows


def _run_diagnostics_study(cfg: ExperimentConfig):
    rows = []
    reports = run_bounds_suite(seed=cfg.seed, squared_trials=cfg.reps,
                               margin_trials=cfg.reps)
    for i, rep in enumerate(reports):
        rows.append(
            ResultRow(
                study="diagnostics", loss=rep.mode, m=cfg.m, k=cfg.k, n=0,
                rep=i, metric="slack", value=rep.slack,
            )
        )
    return rows


def run_experiment(config: ExperimentConfig):
    """Runs the configured study and returns the result rows, sorted by
    (study, loss, n, rep, metric)."""
    if config.study == "multiclass":
        rows = _run_multiclass(config)
    elif config.study == "knapsack":
        rows = _run_knapsack(config)
    elif config.study == "portfolio":
        rows = _run_portfolio(config)
    else:
        rows = _run_diagnostics_study(config)
    rows.sort(key=lambda r: (r.study, r.loss, r.n, r.rep, r.metric))
    return rows


def write_results(rows, path) -> None:
    """Deterministic CSV dump (no timing column; see module docstring)."""
    lines = ["study,loss,m,k,n,rep,metric,value"]
    for r in rows:
        lines.append(
            f"{r.study},{r.loss},{r.m},{r.k},{r.n},{r.rep},{r.metric},{r.value:.17g}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary(rows, path, elapsed: float | None = None) -> None:
    by_key: dict = {}
    for r in rows:
        by_key.setdefault((r.study, r.loss, r.n, r.metric), []).append(r.value)
    lines = []
    for (study, loss, n, metric), vals in sorted(by_key.items()):
        arr = np.array(vals)
        lines.append(
            f"{study} loss={loss} n={n} {metric}: "
            f"mean={arr.mean():.6g} median={np.median(arr):.6g} reps={len(arr)}"
        )
    total_wall = sum(r.wall_time for r in rows)
    lines.append(f"total training wall time: {total_wall:.2f} s")
    if elapsed is not None:
        lines.append(f"total elapsed: {elapsed:.2f} s")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Diagnostics suites (shared by the CLI and the test suite)
# ---------------------------------------------------------------------------

def random_multiclass_dist(rng, m: int, n_w: int = 2, atoms_per_w: int = 5):
    """Random finite distribution with class-indicator costs on n_w feature
    points."""
    atoms = []
    w_weights = rng.dirichlet(np.ones(n_w))
    eye = np.eye(m)
    for i in range(n_w):
        w = rng.uniform(0.0, 1.0, size=2)
        probs = rng.dirichlet(np.ones(m))
        count = min(atoms_per_w, m)
        labels = rng.permutation(m)[:count]
        mass = probs[labels] / probs[labels].sum()
        for lab, q in zip(labels, mass):
            atoms.append((w, 1.0 - eye[lab], float(w_weights[i] * q)))
    total = sum(a[2] for a in atoms)
    atoms = [(w, c, p / total) for w, c, p in atoms]
    return diagnostics.DiscreteDist(tuple(atoms))


def random_margin_dist(rng, alpha: float, n_w: int = 2):
    """Random one-dimensional distribution whose conditionals are symmetric
    about their mean, avoid zero, and have sign margin >= alpha."""
    atoms = []
    w_weights = rng.dirichlet(np.ones(n_w))
    for i in range(n_w):
        w = rng.uniform(-1.0, 1.0, size=1)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        mu = sign * rng.uniform(0.5, 2.0)
        t_in = rng.uniform(0.05, 0.45) * abs(mu)     # stays on mu's side
        t_out = abs(mu) * (1.0 + rng.uniform(0.1, 1.0))  # straddles zero
        q = 0.5 * min(1.0, alpha + rng.uniform(0.0, 1.0 - alpha))
        pairs = [
            (mu - t_in, q / 1.0), (mu + t_in, q),
            (mu - t_out, 0.5 - q), (mu + t_out, 0.5 - q),
        ]
        for c, pr in pairs:
            if pr > 0:
                atoms.append((w, np.array([c]), float(w_weights[i] * pr)))
    total = sum(a[2] for a in atoms)
    atoms = [(w, c, p / total) for w, c, p in atoms]
    return diagnostics.DiscreteDist(tuple(atoms))


def run_bounds_suite(seed: int = 0, squared_trials: int = 50, margin_trials: int = 20):
    """Random-trial checks of the squared-loss and margin risk bounds."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(squared_trials):
        m = int(rng.integers(2, 5))
        dist = random_multiclass_dist(rng, m)
        V = rng.normal(size=(m, 2))
        pred = LinearPredictor(V=V)
        dom = SimplexDomain(m)
        reports.append(diagnostics.check_risk_bound(dist, dom, pred, "squared"))
        reports.append(
            diagnostics.check_risk_bound(dist, dom, pred, "per_coordinate")
        )
    alpha = 0.25
    for _ in range(margin_trials):
        dist = random_margin_dist(rng, alpha)
        V = rng.normal(size=(1, 1))
        pred = LinearPredictor(V=V)
        reports.append(
            diagnostics.check_risk_bound(
                dist, IntervalDomain(), pred, "spo_margin", alpha=alpha
            )
        )
    return reports
