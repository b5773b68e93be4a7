"""Linear predictors and ERM trainers.

The hypothesis class is d = Vw with V an m-by-k coefficient matrix.  Feature
vectors are expected to already carry their appended constant 1 (the datagen
module enforces this); nothing here adds an intercept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LinearPredictor:
    """Coefficient matrix V mapping features w to predicted vectors Vw."""

    V: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if not np.all(np.isfinite(V)):
            raise ValueError("predictor coefficients must be finite")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def k(self) -> int:
        return self.V.shape[1]

    def predict(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.k,):
            raise ValueError(f"expected length-{self.k} feature vector")
        return self.V @ w

    def predict_batch(self, W) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        return W @ self.V.T


def predict(pred: LinearPredictor, w) -> np.ndarray:
    return pred.predict(w)


@dataclass
class TrainReport:
    """Outcome of a training run.

    objective_trace records the best-objective-so-far sequence, which is
    nonincreasing by construction.
    """

    final_objective: float
    iterations: int
    objective_trace: list
    converged: bool
    extra: dict = field(default_factory=dict)


@dataclass
class TrainOptions:
    """Knobs for the first-order ERM trainer.

    alpha0=None selects the initial step size from a 10-point logarithmic
    grid on a 10% holdout using short probe runs.
    """

    steps: int = 1500
    step_rule: str = "inv_sqrt"
    alpha0: float | None = None
    alpha_grid: tuple = tuple(float(a) for a in np.logspace(-3, 2, 10))
    probe_steps: int = 150
    holdout_frac: float = 0.1
    seed: int = 0
    divergence_threshold: float = 1e12


def _as_arrays(data):
    """Accepts (W, C) arrays or an iterable of (w_i, c_i) pairs."""
    if (
        isinstance(data, tuple)
        and len(data) == 2
        and isinstance(data[0], np.ndarray)
        and isinstance(data[1], np.ndarray)
    ):
        W = np.atleast_2d(np.asarray(data[0], dtype=float))
        C = np.asarray(data[1], dtype=float)
    else:
        pairs = list(data)
        W = np.atleast_2d(np.array([np.atleast_1d(w) for w, _ in pairs], dtype=float))
        C = np.array([np.atleast_1d(c) for _, c in pairs], dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if len(W) != len(C):
        raise ValueError("feature and target counts disagree")
    if len(W) == 0:
        raise ValueError("empty training set")
    return W, C


def fit_least_squares(data) -> tuple[LinearPredictor, TrainReport]:
    """Exact empirical squared-risk minimizer via the normal equations.

    A numerically singular Gram matrix triggers a 1e-8 ridge fallback,
    flagged in the report.
    """
    W, C = _as_arrays(data)
    n = len(W)
    gram = W.T @ W
    ridge = False
    if np.linalg.cond(gram) > 1e12:
        gram = gram + 1e-8 * np.eye(gram.shape[0])
        ridge = True
    V = np.linalg.solve(gram, W.T @ C).T
    R = W @ V.T - C
    obj = float(np.sum(R * R) / n)
    grad_norm = float(np.linalg.norm(2.0 * R.T @ W / n))
    report = TrainReport(
        final_objective=obj,
        iterations=1,
        objective_trace=[obj],
        converged=True,
        extra={"ridge_applied": ridge, "grad_norm": grad_norm},
    )
    return LinearPredictor(V=V), report


def _mean_objective(loss, V, W, C, state) -> float:
    values, _, _ = loss.batch(W @ V.T, C, state)
    return float(values.mean())


def _subgradient_run(loss, W, C, steps, alpha0, threshold, trace_out=None, V0=None):
    """Subgradient descent with alpha_t = alpha0/sqrt(t), best-iterate
    tracking.  Returns (best_V, best_obj, iterations, converged, skipped)."""
    n, k = W.shape
    m = C.shape[1]
    state = loss.prepare(C)
    V = np.zeros((m, k)) if V0 is None else np.array(V0, dtype=float)
    best_V, best_obj = V.copy(), np.inf
    skipped = 0
    it = 0
    for t in range(1, steps + 1):
        values, G, bad = loss.batch(W @ V.T, C, state)
        obj = float(values.mean())
        skipped += int(bad.sum())
        if obj < best_obj:
            best_obj, best_V = obj, V.copy()
        if trace_out is not None:
            trace_out.append(best_obj)
        it = t
        if obj > threshold:
            return best_V, best_obj, it, False, skipped
        grad_V = G.T @ W / n
        V = V - (alpha0 / np.sqrt(t)) * grad_V
    obj = _mean_objective(loss, V, W, C, state)
    if obj < best_obj:
        best_obj, best_V = obj, V.copy()
    if trace_out is not None:
        trace_out.append(best_obj)
    return best_V, best_obj, it, True, skipped


def _select_alpha0(loss, W, C, opts: TrainOptions, V0=None) -> float:
    """Grid search over initial step sizes using short probe runs.

    Each candidate runs a short probe on a 90% split and is scored by the
    probe's best-iterate training objective; diverging candidates are
    skipped.  The step size only controls optimization progress, not
    statistical fit, so holdout error is the wrong yardstick here (at small
    n it is dominated by generalization noise and cannot distinguish
    candidates that all reach interpolation).
    """
    n = len(W)
    rng = np.random.default_rng(opts.seed)
    if n >= 2:
        perm = rng.permutation(n)
        n_hold = max(1, int(round(opts.holdout_frac * n)))
        train = perm[n_hold:]
        if len(train) == 0:
            train = np.arange(n)
    else:
        train = np.arange(n)
    Wt, Ct = W[train], C[train]
    best_alpha, best_score = opts.alpha_grid[0], np.inf
    for alpha in opts.alpha_grid:
        _, score, _, ok, _ = _subgradient_run(
            loss, Wt, Ct, opts.probe_steps, alpha, opts.divergence_threshold, V0=V0
        )
        if not ok:
            continue
        if score < best_score - 1e-15:
            best_alpha, best_score = alpha, score
    return best_alpha


def fit_erm_first_order(
    data, loss, opts: TrainOptions | None = None, V0=None
) -> tuple[LinearPredictor, TrainReport]:
    """Minimizes the empirical surrogate risk (1/n) sum_i loss(Vw_i, c_i)
    by subgradient descent with decaying steps and best-iterate averaging.

    V0 overrides the zero initializer (useful for losses whose subgradient
    vanishes identically at V=0, e.g. the regularized gap, where every
    training point starts exactly on a kink of the solution map).

    Breakpoint hits of the regularized-gap loss contribute no gradient for
    the affected point on that step; occurrences are counted in the report.
    Divergence (objective above the threshold) aborts with converged=False.
    """
    if opts is None:
        opts = TrainOptions()
    if opts.steps < 1:
        raise ValueError("steps must be >= 1")
    if opts.step_rule != "inv_sqrt":
        raise ValueError(f"unknown step rule {opts.step_rule!r}")
    W, C = _as_arrays(data)
    alpha0 = (
        opts.alpha0 if opts.alpha0 is not None else _select_alpha0(loss, W, C, opts, V0)
    )
    # The probe split can admit a slightly larger stable step than the full
    # data; if the full run diverges, retreat down the grid.
    fallbacks = sorted(a for a in opts.alpha_grid if a < alpha0)
    while True:
        trace = []
        best_V, best_obj, iters, ok, skipped = _subgradient_run(
            loss, W, C, opts.steps, alpha0, opts.divergence_threshold,
            trace_out=trace, V0=V0,
        )
        if ok or opts.alpha0 is not None or not fallbacks:
            break
        alpha0 = fallbacks.pop()
    report = TrainReport(
        final_objective=best_obj,
        iterations=iters,
        objective_trace=trace,
        converged=ok,
        extra={"alpha0": alpha0, "breakpoint_skips": skipped},
    )
    return LinearPredictor(V=best_V), report


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FORMAT_VERSION = 1


def save_predictor(pred: LinearPredictor, path) -> None:
    """Versioned CSV dump: header rows (version; m,k), then V row-major."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["version", _FORMAT_VERSION])
        writer.writerow(["m", "k"])
        writer.writerow([pred.m, pred.k])
        for row in pred.V:
            writer.writerow([f"{v:.17g}" for v in row])


def load_predictor(path) -> LinearPredictor:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3 or rows[0][0] != "version":
        raise ValueError("not a predictor file")
    if int(rows[0][1]) != _FORMAT_VERSION:
        raise ValueError(f"unsupported predictor format version {rows[0][1]}")
    m, k = int(rows[2][0]), int(rows[2][1])
    V = np.array([[float(v) for v in row] for row in rows[3 : 3 + m]])
    if V.shape != (m, k):
        raise ValueError("predictor file dimensions inconsistent")
    return LinearPredictor(V=V)
