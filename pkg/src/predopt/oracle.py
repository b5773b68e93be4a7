"""Optimization oracles x*(d) for the supported domains.

All solvers are deterministic: ties in every argmin are broken by lowest
index, and repeated calls on identical inputs return bit-identical points.
Scalar entry points delegate to the batch implementations on a single row so
that harness-scale batch solves and one-off calls agree exactly.
"""

from __future__ import annotations

import numpy as np

from .domains import (
    DomainError,
    IntervalDomain,
    KnapsackDomain,
    PortfolioDomain,
    SimplexDomain,
    Solution,
)


class SolverError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""


class BreakpointError(ValueError):
    """Signals a nondifferentiable point of the regularized solution map."""


def _check_dim(dom, d):
    d = np.asarray(d, dtype=float)
    if d.shape != (dom.m,):
        raise ValueError(f"expected length-{dom.m} vector, got shape {d.shape}")
    return d


# ---------------------------------------------------------------------------
# Fractional knapsack (LP greedy)
# ---------------------------------------------------------------------------

def solve_knapsack_batch(dom: KnapsackDomain, D: np.ndarray) -> np.ndarray:
    """Greedy-by-ratio LP optima for each row of D; returns X of same shape.

    Items with d_j <= 0 are never packed; ratio ties break by lowest index
    (stable sort).  Each row has at most one fractional coordinate.
    """
    D = np.asarray(D, dtype=float)
    p, B = dom.p, dom.B
    n, m = D.shape
    ratios = np.where(D > 0, D / p, -np.inf)
    order = np.argsort(-ratios, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    pw = np.broadcast_to(p, (n, m))[rows, order]
    positive = D[rows, order] > 0
    cum = np.cumsum(pw, axis=1)
    prev = cum - pw
    x_sorted = np.zeros((n, m))
    full = positive & (cum <= B)
    frac = positive & (prev < B) & (cum > B)
    x_sorted[full] = 1.0
    fr, fc = np.nonzero(frac)
    x_sorted[fr, fc] = (B - prev[fr, fc]) / pw[fr, fc]
    X = np.zeros((n, m))
    X[rows, order] = x_sorted
    return X


def solve_knapsack(dom: KnapsackDomain, d) -> Solution:
    """LP optimum of max d^T x over the knapsack polytope.

    The dual tau is the marginal value ratio: 0 when the budget is slack,
    otherwise the largest ratio d_j/p_j among not-fully-packed profitable
    items (which is the fractional item's ratio when one exists).
    """
    d = _check_dim(dom, d)
    x = solve_knapsack_batch(dom, d[None, :])[0]
    p, B = dom.p, dom.B
    load = float(p @ x)
    if load < B - 1e-12:
        tau = 0.0
    else:
        loose = (x < 1.0 - 1e-12) & (d > 0)
        tau = float(np.max(d[loose] / p[loose])) if np.any(loose) else 0.0
    return Solution(x=x, objective=float(d @ x), dual=tau)


# ---------------------------------------------------------------------------
# Unit simplex
# ---------------------------------------------------------------------------

def solve_simplex_argmin(dom: SimplexDomain, d) -> Solution:
    """Returns e_j for the lowest index j attaining min_j d_j."""
    d = _check_dim(dom, d)
    j = int(np.argmin(d))
    x = np.zeros(dom.m)
    x[j] = 1.0
    return Solution(x=x, objective=float(d[j]), dual=None)


def solve_interval(dom: IntervalDomain, d) -> Solution:
    """Minimizes d*x over [lo, hi]; ties (d=0) break to the lower endpoint."""
    d = _check_dim(dom, d)
    x = dom.hi if d[0] < 0 else dom.lo
    return Solution(x=np.array([x]), objective=float(d[0] * x), dual=None)


# ---------------------------------------------------------------------------
# Portfolio: equality-constrained closed form (and its quadratic form)
# ---------------------------------------------------------------------------

def _portfolio_eq_pieces(dom: PortfolioDomain):
    Q, p = dom.Q, dom.p
    if np.linalg.cond(Q) > 1e12:
        raise DomainError("Q is numerically singular")
    Qinv_p = np.linalg.solve(Q, p)
    denom = float(p @ Qinv_p)
    return Qinv_p, denom


def portfolio_eq_matrix(dom: PortfolioDomain) -> np.ndarray:
    """The reduced inverse A = Q^{-1} - Q^{-1}p p^T Q^{-1} / (p^T Q^{-1} p)."""
    Qinv_p, denom = _portfolio_eq_pieces(dom)
    Qinv = np.linalg.inv(dom.Q)
    return Qinv - np.outer(Qinv_p, Qinv_p) / denom


def solve_portfolio_eq(dom: PortfolioDomain, d) -> Solution:
    """Closed-form minimizer of (1/2)x^T Q x - d^T x subject to p^T x = b."""
    d = _check_dim(dom, d)
    Qinv_p, denom = _portfolio_eq_pieces(dom)
    gamma = (float(dom.p @ np.linalg.solve(dom.Q, d)) - dom.b) / denom
    x = np.linalg.solve(dom.Q, d - gamma * dom.p)
    obj = dom.f(x) - float(d @ x)
    return Solution(x=x, objective=obj, dual=gamma)


def portfolio_eq_true_loss(dom: PortfolioDomain, d, c) -> float:
    """L(d,c) on the equality-only domain: (1/2)(d-c)^T A (d-c)."""
    d = _check_dim(dom, d)
    c = _check_dim(dom, c)
    A = portfolio_eq_matrix(dom)
    r = d - c
    return float(0.5 * r @ A @ r)


# ---------------------------------------------------------------------------
# Portfolio: nonnegative QP via accelerated projected gradient
# ---------------------------------------------------------------------------

def project_scaled_simplex(p: np.ndarray, b: float, Y: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto {x >= 0, p^T x = b}.

    The multiplier mu solving p^T max(0, y - mu p) = b is found exactly by
    the sort-and-cumsum construction: with ratios r_j = y_j/p_j in
    descending order, the support is the largest prefix k whose candidate
    mu_k = (sum_{j<=k} p_j y_j - b) / sum_{j<=k} p_j^2 stays below r_(k).
    """
    Y = np.asarray(Y, dtype=float)
    n, m = Y.shape
    R = Y / p
    order = np.argsort(-R, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    Rs = R[rows, order]
    S1 = np.cumsum((p * Y)[rows, order], axis=1)
    S2 = np.cumsum(np.broadcast_to(p * p, (n, m))[rows, order], axis=1)
    cand = (S1 - b) / S2
    valid = Rs > cand
    k_star = m - 1 - np.argmax(valid[:, ::-1], axis=1)
    mu = cand[np.arange(n), k_star]
    return np.maximum(0.0, Y - mu[:, None] * p)


def solve_portfolio_qp_batch(
    dom: PortfolioDomain, D: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000
) -> np.ndarray:
    """Accelerated projected gradient on (1/2)x^T Q x - d^T x over the scaled
    simplex, per row of D.

    Q is positive definite, so the strongly convex momentum constant
    (sqrt(L)-sqrt(mu))/(sqrt(L)+sqrt(mu)) gives linear convergence.  Stops
    when every row's fixed-point residual ||x - Proj(x - (Qx - d))||_inf is
    at most tol.
    """
    if not dom.nonneg:
        raise DomainError("use solve_portfolio_eq for the equality-only domain")
    D = np.asarray(D, dtype=float)
    Q, p, b = dom.Q, dom.p, dom.b
    n, m = D.shape
    eigs = np.linalg.eigvalsh(Q)
    mu, L = float(eigs[0]), float(eigs[-1])
    if mu <= 0:
        raise DomainError("Q is not positive definite")
    step = 1.0 / L
    beta = (np.sqrt(L) - np.sqrt(mu)) / (np.sqrt(L) + np.sqrt(mu))
    X = np.full((n, m), b / p.sum())
    Yv = X.copy()
    for it in range(max_iter):
        G = Yv @ Q - D
        X_new = project_scaled_simplex(p, b, Yv - step * G)
        Yv = X_new + beta * (X_new - X)
        X = X_new
        if it % 10 == 9 or it == max_iter - 1:
            R = X - project_scaled_simplex(p, b, X - (X @ Q - D))
            if np.abs(R).max() <= tol:
                return X
    raise SolverError("projected-gradient QP did not reach tolerance")


def solve_portfolio_qp(dom: PortfolioDomain, d) -> Solution:
    d = _check_dim(dom, d)
    x = solve_portfolio_qp_batch(dom, d[None, :])[0]
    return Solution(x=x, objective=dom.f(x) - float(d @ x), dual=None)


# ---------------------------------------------------------------------------
# Regularized knapsack: KKT breakpoint scan plus implicit Jacobian
# ---------------------------------------------------------------------------

def solve_knapsack_regularized_batch(
    dom: KnapsackDomain, D: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Unique maximizers of d^T x - (lam/2)||x||^2 over the knapsack polytope.

    Returns (X, tau) where row i solves the KKT system
    x_j(tau) = clip((d_j - p_j tau)/lam, 0, 1) with the smallest tau >= 0
    giving p^T x(tau) <= B.  Exact breakpoint scan with linear interpolation
    on the bracketing segment; bisection fallback (tol 1e-10) if the segment
    arithmetic is degenerate.
    """
    if lam <= 0:
        raise ValueError("regularization parameter must be positive")
    D = np.asarray(D, dtype=float)
    p, B = dom.p, dom.B
    n, m = D.shape
    X = np.clip(D / lam, 0.0, 1.0)
    tau = np.zeros(n)
    load = X @ p
    need = load > B + 1e-13
    if not np.any(need):
        return X, tau
    idx = np.nonzero(need)[0]
    Dn = D[idx]
    # Candidate taus: x_j kinks at tau = d_j/p_j (x_j hits 0) and
    # (d_j - lam)/p_j (x_j hits 1), plus 0.
    bps = np.concatenate([Dn / p, (Dn - lam) / p], axis=1)
    bps = np.maximum(bps, 0.0)
    bps = np.sort(bps, axis=1)
    bps = np.concatenate([np.zeros((len(idx), 1)), bps], axis=1)
    # g(tau) = p^T clip((d - p tau)/lam, 0, 1), nonincreasing piecewise linear.
    G = np.einsum(
        "j,itj->it",
        p,
        np.clip((Dn[:, None, :] - p[None, None, :] * bps[:, :, None]) / lam, 0.0, 1.0),
    )
    tau_rows = np.empty(len(idx))
    for r in range(len(idx)):
        g, t_cand = G[r], bps[r]
        k = int(np.searchsorted(-g, -B, side="left"))
        if k == 0:
            tau_rows[r] = t_cand[0]
        elif k >= len(g):
            # B below the final candidate's load cannot happen: the last
            # breakpoint zeroes every coordinate, so g ends at 0 <= B.
            tau_rows[r] = t_cand[-1]
        else:
            g0, g1 = g[k - 1], g[k]
            t0, t1 = t_cand[k - 1], t_cand[k]
            if g1 >= B:
                # Flat-at-B segment: smallest tau on it is its left end.
                tau_rows[r] = t0 if g0 <= B else t1
            elif g0 - g1 > 1e-14 * max(1.0, abs(g0)):
                tau_rows[r] = t0 + (g0 - B) * (t1 - t0) / (g0 - g1)
            else:
                lo, hi = t0, t1
                while hi - lo > 1e-10:
                    mid = 0.5 * (lo + hi)
                    if p @ np.clip((Dn[r] - p * mid) / lam, 0.0, 1.0) > B:
                        lo = mid
                    else:
                        hi = mid
                tau_rows[r] = hi
    tau[idx] = tau_rows
    X[idx] = np.clip((Dn - p[None, :] * tau_rows[:, None]) / lam, 0.0, 1.0)
    return X, tau


def solve_knapsack_regularized(dom: KnapsackDomain, d, lam: float) -> Solution:
    d = _check_dim(dom, d)
    X, tau = solve_knapsack_regularized_batch(dom, d[None, :], lam)
    x = X[0]
    obj = float(d @ x - 0.5 * lam * (x @ x))
    return Solution(x=x, objective=obj, dual=float(tau[0]))


def jacobian_regularized(
    dom: KnapsackDomain, d, lam: float, tol: float = 1e-9
) -> np.ndarray:
    """Jacobian dx*_lam/dd by implicit differentiation of the KKT map.

    Raises BreakpointError when d sits within tol of a kink of the solution
    map (a coordinate of (d - p tau)/lam at 0 or 1, or the budget switching
    between slack and active), where the map is not differentiable.
    """
    d = _check_dim(dom, d)
    sol = solve_knapsack_regularized(dom, d, lam)
    x, tau = sol.x, sol.dual
    p, B = dom.p, dom.B
    u = (d - p * tau) / lam
    if np.any(np.abs(u) < tol) or np.any(np.abs(u - 1.0) < tol):
        raise BreakpointError("coordinate of the clip map at a kink")
    active = tau > 0
    if not active and abs(p @ x - B) < tol:
        raise BreakpointError("budget constraint switching activity")
    free = (u > 0) & (u < 1)
    J = np.zeros((dom.m, dom.m))
    if not np.any(free):
        return J
    f = np.nonzero(free)[0]
    if active:
        pf = p[f]
        J[np.ix_(f, f)] = (np.eye(len(f)) - np.outer(pf, pf) / (pf @ pf)) / lam
    else:
        J[f, f] = 1.0 / lam
    return J


def reg_grad_batch(
    dom: KnapsackDomain,
    D: np.ndarray,
    lam: float,
    C: np.ndarray,
    tol: float = 1e-9,
    X: np.ndarray | None = None,
    tau: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise gradients of -c^T x*_lam(d) in d, i.e. -J(d)^T c.

    Returns (G, bad) where bad flags rows at a breakpoint (gradient left as
    zero for the caller to skip and count).  Pass the (X, tau) pair from
    solve_knapsack_regularized_batch to avoid re-solving.
    """
    D = np.asarray(D, dtype=float)
    C = np.asarray(C, dtype=float)
    p, B = dom.p, dom.B
    if X is None or tau is None:
        X, tau = solve_knapsack_regularized_batch(dom, D, lam)
    U = (D - p[None, :] * tau[:, None]) / lam
    kink = np.any(np.abs(U) < tol, axis=1) | np.any(np.abs(U - 1.0) < tol, axis=1)
    slack_tight = (tau == 0.0) & (np.abs(X @ p - B) < tol)
    bad = kink | slack_tight
    free = (U > 0) & (U < 1)
    active = tau > 0
    Cf = np.where(free, C, 0.0)
    pf = np.where(free, p[None, :], 0.0)
    G = -Cf / lam
    denom = np.sum(pf * pf, axis=1)
    scale = np.where(active & (denom > 0), np.sum(pf * Cf, axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    G += pf * scale[:, None] / lam
    G[bad] = 0.0
    return G, bad


# ---------------------------------------------------------------------------
# Generic dispatch
# ---------------------------------------------------------------------------

def solve(dom, d) -> Solution:
    """Domain-appropriate oracle for x*(d), in the domain's natural
    orientation (maximize for knapsack/portfolio, minimize for simplex and
    interval)."""
    if isinstance(dom, KnapsackDomain):
        return solve_knapsack(dom, d)
    if isinstance(dom, SimplexDomain):
        return solve_simplex_argmin(dom, d)
    if isinstance(dom, IntervalDomain):
        return solve_interval(dom, d)
    if isinstance(dom, PortfolioDomain):
        if dom.nonneg:
            return solve_portfolio_qp(dom, d)
        return solve_portfolio_eq(dom, d)
    raise TypeError(f"unsupported domain type {type(dom).__name__}")


def solve_batch(dom, D: np.ndarray) -> np.ndarray:
    """Row-wise x*(d) for each row of D (natural orientation)."""
    D = np.asarray(D, dtype=float)
    if isinstance(dom, KnapsackDomain):
        return solve_knapsack_batch(dom, D)
    if isinstance(dom, SimplexDomain):
        X = np.zeros_like(D)
        X[np.arange(len(D)), np.argmin(D, axis=1)] = 1.0
        return X
    if isinstance(dom, IntervalDomain):
        return np.where(D < 0, dom.hi, dom.lo)
    if isinstance(dom, PortfolioDomain):
        if dom.nonneg:
            return solve_portfolio_qp_batch(dom, D)
        return np.stack([solve_portfolio_eq(dom, row).x for row in D])
    raise TypeError(f"unsupported domain type {type(dom).__name__}")
