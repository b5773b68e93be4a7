"""Exact-risk computation on finite distributions and numerical checks of
the consistency/calibration results.

Everything here enumerates: distributions are finite lists of (w, c, prob)
atoms, so risks, Bayes risks, and the two risk bounds are computed exactly
(up to the per-w surrogate minimizations, which use closed forms where they
exist and derivative-free/subgradient search otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .domains import IntervalDomain, SimplexDomain
from . import oracle
from .losses import (
    AbsDevLoss,
    SpoPlusLoss,
    SquaredLoss,
    true_loss,
)
from .predictor import LinearPredictor


class MarginError(ValueError):
    """Raised when a distribution violates the assumed sign margin."""


# ---------------------------------------------------------------------------
# Finite distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution over (w, c) pairs.

    atoms is a tuple of (w, c, prob); probabilities must be positive and sum
    to 1 within 1e-12.  Conditionals are grouped by the (exact) w value.
    """

    atoms: tuple

    def __post_init__(self):
        norm = []
        total = 0.0
        for w, c, p in self.atoms:
            p = float(p)
            if p <= 0:
                raise ValueError("atom probabilities must be positive")
            w = np.atleast_1d(np.asarray(w, dtype=float))
            c = np.atleast_1d(np.asarray(c, dtype=float))
            w.setflags(write=False)
            c.setflags(write=False)
            norm.append((w, c, p))
            total += p
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        object.__setattr__(self, "atoms", tuple(norm))

    def by_w(self):
        """Groups atoms by w: list of (w, conditional probs, C matrix,
        marginal P(w)), in first-appearance order."""
        groups: dict = {}
        order = []
        for w, c, p in self.atoms:
            key = tuple(w)
            if key not in groups:
                groups[key] = (w, [], [])
                order.append(key)
            groups[key][1].append(p)
            groups[key][2].append(c)
        out = []
        for key in order:
            w, ps, cs = groups[key]
            ps = np.array(ps)
            pw = float(ps.sum())
            out.append((w, ps / pw, np.array(cs), pw))
        return out

    def cond_mean(self, w) -> np.ndarray:
        key = tuple(np.atleast_1d(np.asarray(w, dtype=float)))
        for wv, probs, C, _ in self.by_w():
            if tuple(wv) == key:
                return probs @ C
        raise KeyError("w not in support")


def _as_d_map(d_map):
    if isinstance(d_map, LinearPredictor):
        return d_map.predict
    if callable(d_map):
        return lambda w: np.atleast_1d(np.asarray(d_map(w), dtype=float))
    raise TypeError("d_map must be a LinearPredictor or callable")


@dataclass(frozen=True)
class RiskReport:
    true_risk: float
    surrogate_risk: float
    bayes_true_risk: float
    bayes_surrogate_risk: float


def _cond_true_risk(dom, d, probs, C) -> float:
    return float(sum(p * true_loss(dom, d, c) for p, c in zip(probs, C)))


def _cond_surrogate_risk(loss, d, probs, C) -> float:
    return float(sum(p * loss.eval(d, c).value for p, c in zip(probs, C)))


def _interval_spo_bayes(dom: IntervalDomain, probs, C) -> float:
    """Exact per-w SPO+ Bayes risk on the interval: the objective is convex
    piecewise linear in d with kinks at c_i/2, so the minimum sits on a
    kink."""
    loss = SpoPlusLoss(dom)
    cands = np.unique(C[:, 0] / 2.0)
    return min(_cond_surrogate_risk(loss, np.array([d]), probs, C) for d in cands)


def _is_class_matrix(C, m) -> bool:
    if C.shape[1] != m:
        return False
    for row in C:
        if not (np.isclose(row.sum(), m - 1) and set(np.round(row, 12)) <= {0.0, 1.0}):
            return False
    return True


def _generic_surrogate_bayes(loss, probs, C, restarts: int = 10) -> float:
    """Subgradient descent with restarts for the per-w surrogate minimum of
    losses without a closed form (m <= 5 intended)."""
    m = C.shape[1]
    cbar = probs @ C
    spread = float(np.abs(C).max() + 1.0)
    rng = np.random.default_rng(0)
    best = np.inf
    starts = [cbar] + [cbar + spread * rng.standard_normal(m) for _ in range(restarts - 1)]
    for d0 in starts:
        d = np.array(d0, dtype=float)
        local = np.inf
        for t in range(1, 801):
            val = 0.0
            g = np.zeros(m)
            for p, c in zip(probs, C):
                ev = loss.eval(d, c)
                val += p * ev.value
                if ev.subgrad is not None:
                    g += p * ev.subgrad
            local = min(local, val)
            d = d - (0.5 * spread / np.sqrt(t)) * g
        best = min(best, local)
    return float(best)


def _bayes_surrogate_cond(loss, dom, probs, C) -> float:
    cbar = probs @ C
    if isinstance(loss, SquaredLoss):
        return float(sum(p * np.sum((c - cbar) ** 2) for p, c in zip(probs, C)))
    if isinstance(loss, AbsDevLoss):
        total = 0.0
        for j in range(C.shape[1]):
            med = weighted_median(C[:, j], probs)
            total += float(probs @ np.abs(C[:, j] - med))
        return total
    if isinstance(loss, SpoPlusLoss):
        if isinstance(dom, IntervalDomain):
            return _interval_spo_bayes(dom, probs, C)
        if isinstance(dom, SimplexDomain) and _is_class_matrix(C, dom.m):
            # Class-indicator conditionals admit the structural closed form.
            labels = np.argmin(C, axis=1)
            pvec = np.zeros(dom.m)
            np.add.at(pvec, labels, probs)
            pstar = pvec.max()
            return float(min(1.0, 2.0 * (1.0 - pstar)))
    return _generic_surrogate_bayes(loss, probs, C)


def weighted_median(values, weights) -> float:
    """Smallest v with cumulative weight >= 1/2."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, float)[order]
    w = np.asarray(weights, float)[order]
    cum = np.cumsum(w) / w.sum()
    return float(v[int(np.searchsorted(cum, 0.5 - 1e-15))])


def exact_risks(dist: DiscreteDist, dom, d_map, loss) -> RiskReport:
    """True/surrogate risks of d_map and the corresponding Bayes risks.

    Bayes true risk plugs d = E[c|w] (the conditional-mean predictor is
    optimal because the downstream objective is linear in c); Bayes
    surrogate risk minimizes the conditional surrogate per w (closed form
    for squared/absolute-deviation, kink enumeration or structural formula
    for SPO+, subgradient search otherwise).
    """
    g = _as_d_map(d_map)
    tr = sr = bt = bs = 0.0
    for w, probs, C, pw in dist.by_w():
        d = g(w)
        tr += pw * _cond_true_risk(dom, d, probs, C)
        sr += pw * _cond_surrogate_risk(loss, d, probs, C)
        cbar = probs @ C
        bt += pw * _cond_true_risk(dom, cbar, probs, C)
        bs += pw * _bayes_surrogate_cond(loss, dom, probs, C)
    return RiskReport(
        true_risk=tr, surrogate_risk=sr, bayes_true_risk=bt, bayes_surrogate_risk=bs
    )


def min_true_risk_over_vertices(dist: DiscreteDist, dom) -> float:
    """Exact Bayes true risk by enumerating candidate decisions over the
    domain's vertex set (only x*(d) matters, and it is always a vertex)."""
    if isinstance(dom, IntervalDomain):
        V = np.array([[dom.lo], [dom.hi]])
    else:
        V = dom.vertices()
    s = -1.0 if dom.reward_oriented else 1.0
    total = 0.0
    for w, probs, C, pw in dist.by_w():
        base = sum(
            p * (dom.f(oracle.solve(dom, c).x) + s * c @ oracle.solve(dom, c).x)
            for p, c in zip(probs, C)
        )
        best = min(
            sum(p * (dom.f(x) + s * c @ x) for p, c in zip(probs, C)) for x in V
        )
        total += pw * (best - base)
    return float(total)


# ---------------------------------------------------------------------------
# Risk bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    mode: str = ""

    @staticmethod
    def make(lhs, rhs, mode=""):
        slack = rhs - lhs
        return BoundReport(
            lhs=float(lhs),
            rhs=float(rhs),
            satisfied=bool(slack >= -1e-9),
            slack=float(slack),
            mode=mode,
        )


def check_risk_bound(
    dist: DiscreteDist, dom, predictor, mode: str, alpha: float | None = None
) -> BoundReport:
    """Checks one of the excess-risk inequalities by exact enumeration.

    mode="squared": (R(g)-R(P))^2 <= B_X^2 (R_LS(g)-R_LS(P)).
    mode="per_coordinate": R(g)-R(P) <= B_X sqrt(sum_j E[(g_j - E[c_j|w])^2]).
    mode="spo_margin": R(g)-R(P) <= (1/alpha)(R_SPO+(g)-R_SPO+(P)); needs
    m=1 and per-w sign margin |P[c>0|w]-P[c<0|w]| >= alpha with P[c=0]=0.
    """
    B_X = dom.diameter()
    g = _as_d_map(predictor)
    if mode == "squared":
        rep = exact_risks(dist, dom, g, SquaredLoss())
        lhs = (rep.true_risk - rep.bayes_true_risk) ** 2
        rhs = B_X**2 * (rep.surrogate_risk - rep.bayes_surrogate_risk)
        return BoundReport.make(lhs, rhs, mode)
    if mode == "per_coordinate":
        rep = exact_risks(dist, dom, g, SquaredLoss())
        sq = 0.0
        for w, probs, C, pw in dist.by_w():
            cbar = probs @ C
            sq += pw * float(np.sum((g(w) - cbar) ** 2))
        lhs = rep.true_risk - rep.bayes_true_risk
        rhs = B_X * np.sqrt(sq)
        return BoundReport.make(lhs, rhs, mode)
    if mode == "spo_margin":
        if alpha is None or alpha <= 0:
            raise ValueError("spo_margin mode needs alpha > 0")
        for w, probs, C, pw in dist.by_w():
            c = C[:, 0]
            if np.any(c == 0):
                raise MarginError("P[c=0|w] must be zero")
            margin = abs(float(probs[c > 0].sum() - probs[c < 0].sum()))
            if margin < alpha - 1e-12:
                raise MarginError(
                    f"conditional margin {margin} below alpha={alpha}"
                )
        rep = exact_risks(dist, dom, g, SpoPlusLoss(dom))
        lhs = rep.true_risk - rep.bayes_true_risk
        rhs = (rep.surrogate_risk - rep.bayes_surrogate_risk) / alpha
        return BoundReport.make(lhs, rhs, mode)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Fisher-inconsistency witnesses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MulticlassSpoResult:
    value: float
    d: np.ndarray
    is_constant_optimal: bool


def multiclass_spo_minimizer(p, grid: int = 101) -> MulticlassSpoResult:
    """Minimum of E[spo+ loss] over d for a single-w multiclass problem with
    class probabilities p.

    Structural answer: value 1 with any constant vector optimal when
    max p <= 1/2, else 2(1 - max p) with the top class's coordinate lowered
    by 1/2.  Verified against exhaustive search over the one-parameter
    reduced family; disagreement beyond 1e-9 raises.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a strictly positive probability vector")
    m = p.size
    dom = SimplexDomain(m)
    loss = SpoPlusLoss(dom)
    jstar = int(np.argmax(p))
    pstar = float(p[jstar])
    if pstar <= 0.5:
        value, d, const = 1.0, np.zeros(m), True
    else:
        value = 2.0 * (1.0 - pstar)
        d = np.zeros(m)
        d[jstar] = -0.5
        const = False
    C = 1.0 - np.eye(m)

    def exact(dv):
        return float(sum(pj * loss.eval(dv, cj).value for pj, cj in zip(p, C)))

    brute = np.inf
    for j in range(m):
        for delta in np.linspace(0.0, 1.0, grid):
            dv = np.zeros(m)
            dv[j] = -delta / 2.0
            brute = min(brute, exact(dv))
    if abs(brute - value) > 1e-9 or abs(exact(d) - value) > 1e-9:
        raise AssertionError(
            f"structural value {value} disagrees with brute force {brute}"
        )
    return MulticlassSpoResult(value=value, d=d, is_constant_optimal=const)


@dataclass(frozen=True)
class Spo1dResult:
    d_star: float
    value: float
    sign_d: int
    sign_mean: int
    sign_median: int


def spo_1d_population_minimizer(values, probs) -> Spo1dResult:
    """Golden-section minimizer of E[spo+ loss] for a one-dimensional cost
    on X = [-1/2, 1/2]; reports the signs of d*, the mean, and the median.
    """
    c = np.asarray(values, dtype=float)
    w = np.asarray(probs, dtype=float)
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be positive and sum to 1")
    if np.any(c == 0) or np.all(c == 0):
        raise ValueError("support must exclude 0")
    dom = IntervalDomain()
    loss = SpoPlusLoss(dom)

    def obj(d):
        return float(sum(wi * loss.eval(np.array([d]), np.array([ci])).value
                         for wi, ci in zip(w, c)))

    lo = float(c.min() / 2.0 - 1.0)
    hi = float(c.max() / 2.0 + 1.0)
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = obj(x1), obj(x2)
    while b - a > 1e-10:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = obj(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = obj(x2)
    d_star = 0.5 * (a + b)
    mean = float(w @ c)
    med = weighted_median(c, w)
    sgn = lambda v: int(np.sign(v))
    return Spo1dResult(
        d_star=d_star,
        value=obj(d_star),
        sign_d=sgn(d_star),
        sign_mean=sgn(mean),
        sign_median=sgn(med),
    )


# ---------------------------------------------------------------------------
# Calibration counterexample density family
# ---------------------------------------------------------------------------

class Prop1Density:
    """A symmetric-about-eps continuous density with mean eps whose sign
    margin P[c>0] - P[c<0] equals (1 - 2 Phi(-eps))/k.

    Gaussian tails scaled by S = (z + (1-1/k)(1-z))/z with z = 2 Phi(-eps),
    bridged on (0, 2 eps) by a piecewise-linear profile h(.; alpha) with
    unit endpoint and integral alpha.  For alpha < 2/3 the profile is the
    flat-then-linear one; for alpha >= 2/3 that family is infeasible and an
    affine profile h(r) = (2 alpha - 1) + (2 - 2 alpha) r (same endpoint and
    integral, positive since alpha > 1/2) is used instead.
    """

    def __init__(self, eps: float, k: int):
        if eps <= 0 or k < 1:
            raise ValueError("need eps > 0 and k >= 1")
        self.eps = float(eps)
        self.k = int(k)
        z = 2.0 * stats.norm.cdf(-self.eps)
        self.z_eps = z
        self.scale = (z + (1.0 - 1.0 / self.k) * (1.0 - z)) / z
        phi_eps = stats.norm.pdf(self.eps)
        self.alpha = (1.0 - z) / (2.0 * self.k * self.eps * self.scale * phi_eps)
        if self.alpha <= 0:
            raise ValueError(f"alpha {self.alpha} not positive for (eps={eps}, k={k})")

    def _h(self, r):
        r = np.asarray(r, dtype=float)
        a = self.alpha
        if a < 2.0 / 3.0:
            r0 = (2.0 - 3.0 * a) / (2.0 - a)
            return np.where(
                r <= r0, a / 2.0, (2.0 - a) ** 2 * (r - 1.0) / (4.0 * a) + 1.0
            )
        return (2.0 * a - 1.0) + (2.0 - 2.0 * a) * r

    def psi(self, c):
        c = np.asarray(c, dtype=float)
        eps, S = self.eps, self.scale
        tail = S * stats.norm.pdf(c - eps)
        bridge_lo = S * stats.norm.pdf(eps) * self._h(1.0 - c / eps)
        bridge_hi = S * stats.norm.pdf(eps) * self._h(c / eps - 1.0)
        out = np.where(c <= 0, tail, np.where(c < eps, bridge_lo,
                       np.where(c < 2 * eps, bridge_hi, tail)))
        return out if out.ndim else float(out)

    def _segments(self):
        eps = self.eps
        return [(-8.0, 0.0), (0.0, eps), (eps, 2 * eps), (2 * eps, 2 * eps + 8.0)]

    def _quad(self, f):
        total = 0.0
        for a, b in self._segments():
            val, _ = integrate.quad(f, a, b, epsabs=1e-9, epsrel=1e-11, limit=200)
            total += val
        return total

    def total_mass(self) -> float:
        S, eps = self.scale, self.eps
        tails = S * stats.norm.cdf(-8.0 - eps) + S * stats.norm.cdf(-eps - 8.0)
        return self._quad(lambda c: self.psi(c)) + tails

    def mean(self) -> float:
        S, eps = self.scale, self.eps
        lo_cut, hi_cut = -8.0, 2 * eps + 8.0
        # Analytic Gaussian partial first moments for the trimmed tails.
        lo = S * (eps * stats.norm.cdf(lo_cut - eps) - stats.norm.pdf(lo_cut - eps))
        hi = S * (eps * stats.norm.cdf(-(hi_cut - eps)) + stats.norm.pdf(hi_cut - eps))
        return self._quad(lambda c: c * self.psi(c)) + lo + hi

    def margin(self) -> float:
        """P[c>0] - P[c<0], equal to the mass on (0, 2 eps) by symmetry."""
        eps = self.eps
        total = 0.0
        for a, b in [(0.0, eps), (eps, 2 * eps)]:
            val, _ = integrate.quad(self.psi, a, b, epsabs=1e-9, epsrel=1e-11, limit=200)
            total += val
        return total


def prop1_density(eps: float, k: int) -> Prop1Density:
    return Prop1Density(eps, k)


# ---------------------------------------------------------------------------
# Convex envelope of sampled calibration values
# ---------------------------------------------------------------------------

class ConvexEnvelope:
    """Greatest convex minorant of sampled (eps, delta) points, evaluated by
    linear interpolation on the lower convex hull."""

    def __init__(self, eps_points, values):
        e = np.asarray(eps_points, dtype=float)
        v = np.asarray(values, dtype=float)
        if e.ndim != 1 or e.shape != v.shape or e.size < 1:
            raise ValueError("need matching 1-d sample arrays")
        if np.any(np.diff(e) <= 0):
            raise ValueError("eps samples must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("delta samples must be nonnegative")
        hull = []
        for x, y in zip(e, v):
            while len(hull) >= 2:
                (x1, y1), (x2, y2) = hull[-2], hull[-1]
                # Drop the middle point when it lies on or above the chord.
                if (y2 - y1) * (x - x1) >= (y - y1) * (x2 - x1):
                    hull.pop()
                else:
                    break
            hull.append((x, y))
        self.hull = np.array(hull)
        self.lo, self.hi = float(e[0]), float(e[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lo - 1e-12) or np.any(x > self.hi + 1e-12):
            raise ValueError("evaluation outside the sampled range")
        out = np.interp(x, self.hull[:, 0], self.hull[:, 1])
        return float(out) if out.ndim == 0 else out


def convex_envelope(eps_points, values) -> ConvexEnvelope:
    return ConvexEnvelope(eps_points, values)


# ---------------------------------------------------------------------------
# Calibration-function estimate on finite distributions
# ---------------------------------------------------------------------------

def estimate_calibration_function(
    dist: DiscreteDist, dom, loss, eps_values, grid_points: int = 41
):
    """Grid estimate of the uniform calibration function: for each eps, the
    least excess surrogate risk among grid predictions whose excess true
    risk is >= eps (non-strict).  d ranges over a box of radius twice the
    largest |c| in the support.  This is an estimate, not an exact value.
    """
    radius = 2.0 * max(float(np.abs(c).max()) for _, c, _ in dist.atoms)
    m = dist.atoms[0][1].size
    axes = [np.linspace(-radius, radius, grid_points)] * m
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    out = []
    for eps in eps_values:
        best = np.inf
        for w, probs, C, pw in dist.by_w():
            cbar = probs @ C
            base_true = _cond_true_risk(dom, cbar, probs, C)
            base_sur = _bayes_surrogate_cond(loss, dom, probs, C)
            for d in mesh:
                if _cond_true_risk(dom, d, probs, C) - base_true >= eps:
                    best = min(
                        best, _cond_surrogate_risk(loss, d, probs, C) - base_sur
                    )
        out.append(best)
    return np.array(out)
