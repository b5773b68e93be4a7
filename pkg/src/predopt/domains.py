"""Feasible-set descriptions for the supported decision problems.

Each domain bundles the data defining the feasible set X, the curvature term
f(x) of the objective f(x) + c^T x, and the Euclidean diameter of X used by
the risk-bound diagnostics.

Orientation convention: the canonical internal problem is minimization of
f(x) + c^T x.  Knapsack values and portfolio returns are "reward" vectors d
that enter as c = -d at the adapter boundary; the simplex and interval
domains take cost vectors directly.  Each domain records this through
``reward_oriented``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


class DomainError(ValueError):
    """Raised when a domain is constructed from inconsistent data."""


def _as_vector(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DomainError(f"{name} must be a 1-d array, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class Solution:
    """A solver result: the point, its objective, and optional dual value.

    ``dual`` holds the budget multiplier tau for knapsack-type solves and the
    equality multiplier gamma for the portfolio closed form; None otherwise.
    """

    x: np.ndarray
    objective: float
    dual: float | None = None


@dataclass(frozen=True)
class KnapsackDomain:
    """Fractional knapsack polytope {x in [0,1]^m : p^T x <= B}.

    Value-maximization orientation: solvers maximize d^T x.
    """

    p: np.ndarray
    B: float

    def __post_init__(self):
        p = _as_vector(self.p, "p")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "B", float(self.B))
        if p.size == 0:
            raise DomainError("knapsack needs at least one item")
        if np.any(p <= 0):
            raise DomainError("knapsack weights must be positive")
        if self.B <= 0:
            raise DomainError("knapsack capacity must be positive")

    @property
    def m(self) -> int:
        return self.p.size

    reward_oriented = True

    def f(self, x) -> float:
        return 0.0

    def vertices(self) -> np.ndarray:
        """All vertices of the polytope (0/1 points plus budget-tight points
        with exactly one fractional coordinate).  Exponential in m; capped.
        """
        m = self.m
        if m > 16:
            raise DomainError("vertex enumeration capped at m=16")
        p, B = self.p, self.B
        pts = []
        for bits in range(2 ** m):
            x = np.array([(bits >> j) & 1 for j in range(m)], dtype=float)
            load = p @ x
            if load <= B + 1e-12:
                pts.append(x)
            for j in range(m):
                if x[j] == 1.0:
                    rest = load - p[j]
                    if rest < B < load:
                        y = x.copy()
                        y[j] = (B - rest) / p[j]
                        pts.append(y)
        return np.unique(np.round(np.array(pts), 12), axis=0)

    def diameter(self) -> float:
        V = self.vertices()
        sq = np.sum(V * V, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (V @ V.T)
        return float(np.sqrt(max(d2.max(), 0.0)))


@dataclass(frozen=True)
class PortfolioDomain:
    """Mean-variance portfolio domain with f(x) = (1/2) x^T Q x.

    Feasible set is {p^T x = b} (nonneg=False) or {p^T x = b, x >= 0}.
    Return-maximization orientation: solvers minimize f(x) - d^T x.
    """

    Q: np.ndarray
    p: np.ndarray
    b: float
    nonneg: bool = True

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        p = _as_vector(self.p, "p")
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DomainError("Q must be square")
        if Q.shape[0] != p.size:
            raise DomainError("Q and p dimensions disagree")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise DomainError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise DomainError("Q must be positive definite")
        if np.any(p <= 0):
            raise DomainError("budget coefficients must be positive")
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "b", float(self.b))
        if self.nonneg and self.b <= 0:
            raise DomainError("b must be positive when x >= 0 is enforced")

    @property
    def m(self) -> int:
        return self.p.size

    reward_oriented = True

    def f(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x)

    def diameter(self) -> float:
        if not self.nonneg:
            raise DomainError("equality-only portfolio domain is unbounded")
        # Vertices of {p^T x = b, x >= 0} are (b/p_j) e_j.
        v = self.b / self.p
        best = 0.0
        for i, j in combinations(range(self.m), 2):
            best = max(best, float(np.hypot(v[i], v[j])))
        return best


@dataclass(frozen=True)
class SimplexDomain:
    """Unit simplex conv{e_1, ..., e_m}; cost-minimization orientation."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise DomainError("simplex needs m >= 2")

    reward_oriented = False

    def f(self, x) -> float:
        return 0.0

    def vertices(self) -> np.ndarray:
        return np.eye(self.m)

    def diameter(self) -> float:
        return float(np.sqrt(2.0))


@dataclass(frozen=True)
class IntervalDomain:
    """One-dimensional interval [lo, hi]; cost-minimization orientation.

    The default [-1/2, 1/2] is the binary-decision setting in which the true
    loss of predicting the wrong sign is 0/1-valued.
    """

    lo: float = -0.5
    hi: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not self.lo < self.hi:
            raise DomainError("need lo < hi")

    @property
    def m(self) -> int:
        return 1

    reward_oriented = False

    def f(self, x) -> float:
        return 0.0

    def diameter(self) -> float:
        return self.hi - self.lo
