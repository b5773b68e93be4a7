"""Synthetic instance/data generators and CSV ingestion.

All generators are pure functions of (params, seed): identical inputs give
bit-identical outputs.  Repetition seeds are derived by the documented
splitting rule child_seed(seed, rep) = SeedSequence(seed, spawn_key=(rep,)).

CSV schemas (UTF-8, header row, ISO-8601 dates):
  returns.csv: date,ticker,return        (long format, one row per cell)
  factors.csv: date,f1,...,f{k-1}        (wide format)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .domains import KnapsackDomain


class DataError(ValueError):
    """Raised when input data is missing or inconsistent."""


def child_seed(seed: int, rep: int) -> np.random.SeedSequence:
    """Independent per-repetition seed stream."""
    return np.random.SeedSequence(seed, spawn_key=(rep,))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, (np.random.SeedSequence, np.random.Generator)):
        return np.random.default_rng(seed)
    return np.random.default_rng(int(seed))


# ---------------------------------------------------------------------------
# Knapsack study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnapsackGenParams:
    """Knapsack synthetic-data parameters.

    delta is the (odd) polynomial degree of the ground-truth link; eps_bar
    the half-width of the multiplicative noise; noise toggles the additive
    shifted-exponential term (off in exact-recovery test mode).
    """

    m: int
    k: int
    delta: int = 1
    eps_bar: float = 0.1
    seed: int = 0
    noise: bool = True

    def __post_init__(self):
        if self.delta < 1 or self.delta % 2 == 0:
            raise ValueError("delta must be an odd integer >= 1")
        if not 0.0 <= self.eps_bar < 1.0:
            raise ValueError("eps_bar must lie in [0, 1)")


def gen_knapsack_instance(m: int, seed) -> KnapsackDomain:
    """Random knapsack: integer weights in [1,1000], capacity B uniform
    integer in [l, u] with l = max_j p_j and u = r*l + sum(p) - l,
    r ~ U[0,1]."""
    if m < 1:
        raise ValueError("need m >= 1")
    rng = _rng(seed)
    p = rng.integers(1, 1001, size=m).astype(float)
    l = float(p.max())
    r = float(rng.uniform())
    u = r * l + p.sum() - l
    hi = max(int(np.floor(u)), int(l))
    B = float(rng.integers(int(l), hi + 1))
    return KnapsackDomain(p=p, B=B)


def gen_knapsack_data(params: KnapsackGenParams, V0, n: int):
    """Features uniform on [-1,1]^k with a trailing constant 1; values
    c_ij = eps_ij * (v_{0,j}^T w_i)^delta + eta_ij with eps ~ U[1-e, 1+e]
    and eta = (E-1)/2, E exponential with unit scale (so E[eta] = 0)."""
    V0 = np.asarray(V0, dtype=float)
    if V0.shape != (params.m, params.k):
        raise ValueError("V0 shape must be (m, k)")
    rng = _rng(params.seed)
    W = rng.uniform(-1.0, 1.0, size=(n, params.k))
    W[:, -1] = 1.0
    base = (W @ V0.T) ** params.delta
    eps = rng.uniform(1.0 - params.eps_bar, 1.0 + params.eps_bar, size=(n, params.m))
    C = eps * base
    if params.noise:
        C = C + (rng.exponential(1.0, size=(n, params.m)) - 1.0) / 2.0
    return W, C


# ---------------------------------------------------------------------------
# Multiclass study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogitGenParams:
    """Multinomial-logit parameters; V_true defaults to standard normal
    entries drawn from the seed."""

    m: int
    k: int
    seed: int = 0
    V_true: np.ndarray | None = None

    def __post_init__(self):
        if self.V_true is None:
            V = _rng(self.seed).normal(size=(self.m, self.k))
        else:
            V = np.asarray(self.V_true, dtype=float)
            if V.shape != (self.m, self.k):
                raise ValueError("V_true shape must be (m, k)")
        V = V.copy()
        V.setflags(write=False)
        object.__setattr__(self, "V_true", V)


@dataclass(frozen=True)
class MulticlassData:
    W: np.ndarray
    C: np.ndarray          # rows are 1_m - e_label
    labels: np.ndarray
    probs: np.ndarray      # exact class probabilities p_j(w_i)


def class_probs(params: LogitGenParams, W) -> np.ndarray:
    """Exact P[c = 1_m - e_j | w] = softmax(-V_true w)."""
    logits = -(np.asarray(W, float) @ params.V_true.T)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def gen_multiclass_data(params: LogitGenParams, n: int) -> MulticlassData:
    """Features uniform on [0,1]^k; labels from the multinomial logit; the
    exact class probabilities are returned for evaluation."""
    rng = _rng(params.seed)
    W = rng.uniform(0.0, 1.0, size=(n, params.k))
    P = class_probs(params, W)
    u = rng.random(n)
    labels = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    labels = np.minimum(labels, params.m - 1)
    C = 1.0 - np.eye(params.m)[labels]
    return MulticlassData(W=W, C=C, labels=labels, probs=P)


# ---------------------------------------------------------------------------
# Portfolio study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortfolioCsvSchema:
    returns_path: str
    factors_path: str


@dataclass(frozen=True)
class PortfolioData:
    """Training window plus held-out horizon for the portfolio study.

    Feature rows already carry the appended constant 1.
    """

    W_train: np.ndarray
    C_train: np.ndarray
    Q: np.ndarray
    W_test: np.ndarray
    C_test: np.ndarray
    jitter_applied: bool
    tickers: tuple = ()
    V_true: np.ndarray | None = None


def _covariance_with_jitter(R: np.ndarray):
    if len(R) >= 2:
        Q = np.cov(R, rowvar=False, ddof=1)
    else:
        Q = np.zeros((R.shape[1], R.shape[1]))
    Q = np.atleast_2d(Q)
    jitter = bool(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0)
    if jitter:
        Q = Q + 1e-8 * np.eye(Q.shape[0])
    return 0.5 * (Q + Q.T), jitter


def load_portfolio_window(
    schema: PortfolioCsvSchema, tickers, window: int, horizon: int, start: int = 0
) -> PortfolioData:
    """Loads a consecutive date window for the given tickers.

    Q is the sample covariance (denominator n-1) of the training returns;
    factor vectors get a constant 1 appended.  Missing cells raise a
    DataError naming the date and ticker; a non-PD Q gets 1e-8 jitter and a
    flag.
    """
    tickers = list(tickers)
    rets = pd.read_csv(schema.returns_path)
    facs = pd.read_csv(schema.factors_path)
    for col in ("date", "ticker", "return"):
        if col not in rets.columns:
            raise DataError(f"returns file missing column {col!r}")
    if "date" not in facs.columns:
        raise DataError("factors file missing column 'date'")
    wide = rets.pivot_table(index="date", columns="ticker", values="return", aggfunc="first")
    for t in tickers:
        if t not in wide.columns:
            raise DataError(f"ticker {t!r} absent from returns file")
    wide = wide[tickers].sort_index()
    dates = list(wide.index)
    need = window + horizon
    if len(dates) < start + need:
        raise DataError(
            f"need {start + need} dates, returns file has {len(dates)}"
        )
    sel = dates[start : start + need]
    block = wide.loc[sel]
    if block.isna().any().any():
        bad = block.isna().stack()
        date, ticker = bad[bad].index[0]
        raise DataError(f"missing return for date {date} ticker {ticker!r}")
    facs = facs.set_index("date").sort_index()
    missing = [d for d in sel if d not in facs.index]
    if missing:
        raise DataError(f"missing factor row for date {missing[0]}")
    fblock = facs.loc[sel]
    if fblock.isna().any().any():
        date = fblock.isna().any(axis=1).idxmax()
        raise DataError(f"missing factor value for date {date}")
    R = block.to_numpy(dtype=float)
    F = fblock.to_numpy(dtype=float)
    W = np.hstack([F, np.ones((len(F), 1))])
    Q, jitter = _covariance_with_jitter(R[:window])
    return PortfolioData(
        W_train=W[:window],
        C_train=R[:window],
        Q=Q,
        W_test=W[window:],
        C_test=R[window:],
        jitter_applied=jitter,
        tickers=tuple(tickers),
    )


def gen_portfolio_synthetic(
    m: int, k: int, n: int, seed, horizon: int = 10
) -> PortfolioData:
    """Synthetic stand-in for the CSV loader: i.i.d. normal factors, linear
    returns c = V0 w + noise, Q from the training sample covariance."""
    rng = _rng(seed)
    V0 = rng.normal(size=(m, k))
    F = rng.normal(size=(n + horizon, k - 1))
    W = np.hstack([F, np.ones((n + horizon, 1))])
    C = W @ V0.T + 0.1 * rng.normal(size=(n + horizon, m))
    Q, jitter = _covariance_with_jitter(C[:n])
    return PortfolioData(
        W_train=W[:n],
        C_train=C[:n],
        Q=Q,
        W_test=W[n:],
        C_test=C[n:],
        jitter_applied=jitter,
        V_true=V0,
    )


# ---------------------------------------------------------------------------
# Instance dumps
# ---------------------------------------------------------------------------

def save_knapsack_instance(dom: KnapsackDomain, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "B"])
        w.writerow([dom.m, f"{dom.B:.17g}"])
        w.writerow([f"{v:.17g}" for v in dom.p])


def load_knapsack_instance(path) -> KnapsackDomain:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    m = int(rows[1][0])
    B = float(rows[1][1])
    p = np.array([float(v) for v in rows[2]])
    if p.size != m:
        raise DataError("knapsack instance file dimensions inconsistent")
    return KnapsackDomain(p=p, B=B)
