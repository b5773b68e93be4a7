"""True loss and surrogate losses with subgradients.

Vectors d and c are always expressed in the domain's natural orientation
(item values / asset returns for the knapsack and portfolio domains, costs
for the simplex and interval domains).  Internally everything reduces to the
canonical minimization of f(x) + cost^T x with cost = -d on reward-oriented
domains, so subgradients returned here are valid in the natural d-space and
can be fed directly to the trainers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import KnapsackDomain, PortfolioDomain
from . import oracle


@dataclass(frozen=True)
class LossEval:
    """A loss value with its subgradient in d (None at nondifferentiable
    points of losses that only admit an a.e. gradient)."""

    value: float
    subgrad: np.ndarray | None
    at_breakpoint: bool = False


@dataclass(frozen=True)
class RegGapParams:
    """Parameters of the regularized-gap knapsack loss."""

    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")


def _orient_sign(dom) -> float:
    return -1.0 if dom.reward_oriented else 1.0


def _objective(dom, v, x) -> float:
    """f(x) + cost^T x with cost derived from the natural vector v."""
    return dom.f(x) + _orient_sign(dom) * float(np.dot(v, x))


def true_loss(dom, d, c) -> float:
    """Optimality gap of deciding with d when c is realized.

    L(d,c) = f(x*(d)) + cost_c^T x*(d) - min_x {f(x) + cost_c^T x} >= 0,
    using the module oracle with its deterministic tie rule.
    """
    xd = oracle.solve(dom, d).x
    xc = oracle.solve(dom, c).x
    return _objective(dom, c, xd) - _objective(dom, c, xc)


def true_loss_batch(dom, D, C) -> np.ndarray:
    """Row-wise true loss for paired rows of D and C."""
    D = np.asarray(D, dtype=float)
    C = np.asarray(C, dtype=float)
    XD = oracle.solve_batch(dom, D)
    XC = oracle.solve_batch(dom, C)
    s = _orient_sign(dom)
    fXD = _f_batch(dom, XD)
    fXC = _f_batch(dom, XC)
    return (fXD + s * np.sum(C * XD, axis=1)) - (fXC + s * np.sum(C * XC, axis=1))


def _f_batch(dom, X) -> np.ndarray:
    if isinstance(dom, PortfolioDomain):
        return 0.5 * np.sum((X @ dom.Q) * X, axis=1)
    return np.zeros(len(X))


def squared_loss(d, c) -> LossEval:
    """||d - c||_2^2 with gradient 2(d - c)."""
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    r = d - c
    return LossEval(value=float(r @ r), subgrad=2.0 * r)


def abs_dev_loss(d, c) -> LossEval:
    """||d - c||_1 with entrywise sign subgradient (0 at ties)."""
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    r = d - c
    return LossEval(value=float(np.abs(r).sum()), subgrad=np.sign(r))


def spo_plus_loss(dom, d, c) -> LossEval:
    """Convex surrogate L(c, 2d - c): the true loss evaluated at the
    reflected prediction.  Nonnegative, zero at d = c, convex in d.

    The subgradient (in canonical cost coordinates, 2(x*(c) - x*(2d-c)))
    is returned in the natural d-space, i.e. multiplied by the orientation
    sign.
    """
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    xc = oracle.solve(dom, c).x
    r = 2.0 * d - c
    x2 = oracle.solve(dom, r).x
    value = _objective(dom, r, xc) - _objective(dom, r, x2)
    g = 2.0 * _orient_sign(dom) * (xc - x2)
    return LossEval(value=value, subgrad=g)


def reg_gap_loss(dom, params: RegGapParams, d, c) -> LossEval:
    """Knapsack decision regret of the regularized solution map:
    c^T x*(c) - c^T x*_lam(d), with a.e. gradient -J(d)^T c.

    Values may dip below zero by at most lam*m/2 (regularization error);
    anything more negative indicates a solver bug and raises.  At breakpoints
    of the solution map the value is returned without a gradient.
    """
    if not isinstance(dom, KnapsackDomain):
        raise TypeError("reg_gap_loss is defined on the knapsack domain only")
    d = np.asarray(d, dtype=float)
    c = np.asarray(c, dtype=float)
    xc = oracle.solve_knapsack(dom, c).x
    xlam = oracle.solve_knapsack_regularized(dom, d, params.lam).x
    value = float(c @ xc - c @ xlam)
    if value < -params.lam * dom.m / 2.0 - 1e-9:
        raise ValueError(
            f"reg gap {value} below the -lam*m/2 regularization floor"
        )
    try:
        J = oracle.jacobian_regularized(dom, d, params.lam)
    except oracle.BreakpointError:
        return LossEval(value=value, subgrad=None, at_breakpoint=True)
    return LossEval(value=value, subgrad=-(J.T @ c))


# ---------------------------------------------------------------------------
# Trainable loss objects (batch evaluation for the ERM loop)
# ---------------------------------------------------------------------------

class SquaredLoss:
    """Squared loss as a trainable objective."""

    name = "squared"
    convex = True

    def eval(self, d, c) -> LossEval:
        return squared_loss(d, c)

    def prepare(self, C):
        return None

    def batch(self, D, C, state=None):
        R = np.asarray(D, float) - np.asarray(C, float)
        values = np.sum(R * R, axis=1)
        return values, 2.0 * R, np.zeros(len(R), dtype=bool)


class AbsDevLoss:
    """Absolute-deviation loss as a trainable objective."""

    name = "absdev"
    convex = True

    def eval(self, d, c) -> LossEval:
        return abs_dev_loss(d, c)

    def prepare(self, C):
        return None

    def batch(self, D, C, state=None):
        R = np.asarray(D, float) - np.asarray(C, float)
        return np.sum(np.abs(R), axis=1), np.sign(R), np.zeros(len(R), dtype=bool)


class SpoPlusLoss:
    """SPO+ surrogate bound to a decision domain."""

    name = "spo_plus"
    convex = True

    def __init__(self, dom):
        self.dom = dom

    def eval(self, d, c) -> LossEval:
        return spo_plus_loss(self.dom, d, c)

    def prepare(self, C):
        C = np.asarray(C, dtype=float)
        XC = oracle.solve_batch(self.dom, C)
        return {"XC": XC, "fXC": _f_batch(self.dom, XC)}

    def batch(self, D, C, state=None):
        D = np.asarray(D, dtype=float)
        C = np.asarray(C, dtype=float)
        if state is None:
            state = self.prepare(C)
        XC, fXC = state["XC"], state["fXC"]
        R = 2.0 * D - C
        X2 = oracle.solve_batch(self.dom, R)
        s = _orient_sign(self.dom)
        values = (fXC + s * np.sum(R * XC, axis=1)) - (
            _f_batch(self.dom, X2) + s * np.sum(R * X2, axis=1)
        )
        G = 2.0 * s * (XC - X2)
        return values, G, np.zeros(len(D), dtype=bool)


class RegGapLoss:
    """Regularized-gap knapsack loss with implicit-Jacobian gradients.

    Tracks how often evaluations land on a breakpoint (gradient skipped) and
    how often the value dips negative within the regularization floor.
    """

    convex = False

    def __init__(self, dom: KnapsackDomain, params: RegGapParams):
        if not isinstance(dom, KnapsackDomain):
            raise TypeError("RegGapLoss needs a knapsack domain")
        self.dom = dom
        self.params = params
        self.negative_count = 0

    @property
    def name(self):
        return "reg_gap"

    def eval(self, d, c) -> LossEval:
        out = reg_gap_loss(self.dom, self.params, d, c)
        if out.value < 0:
            self.negative_count += 1
        return out

    def prepare(self, C):
        C = np.asarray(C, dtype=float)
        XC = oracle.solve_knapsack_batch(self.dom, C)
        return {"base": np.sum(C * XC, axis=1)}

    def batch(self, D, C, state=None):
        D = np.asarray(D, dtype=float)
        C = np.asarray(C, dtype=float)
        if state is None:
            state = self.prepare(C)
        lam = self.params.lam
        X, tau = oracle.solve_knapsack_regularized_batch(self.dom, D, lam)
        values = state["base"] - np.sum(C * X, axis=1)
        floor = -lam * self.dom.m / 2.0 - 1e-9
        if np.any(values < floor):
            raise ValueError("reg gap below the regularization floor")
        self.negative_count += int(np.sum(values < 0))
        G, bad = oracle.reg_grad_batch(self.dom, D, lam, C, X=X, tau=tau)
        return values, G, bad
