"""Emission of training problems as LP-format model files for external
solvers: the regularized-gap knapsack ERM as a big-M mixed-integer model,
and the multiclass SPO+ ERM as its lifted linear program.

Variable naming scheme: predictor coefficients `V_r_c`; per-point blocks
`x_i_j`, `tau_i`, `q_i_j`, `z_i_j`, `v_i` (knapsack model) and `t_i`,
`gamma_i` (multiclass model).  Coefficients are printed with 17 significant
digits so a re-read reproduces them bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domains import KnapsackDomain
from .oracle import solve_knapsack_batch

_SENSES = ("<=", ">=", "=")


@dataclass
class Constraint:
    name: str
    coeffs: dict
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in _SENSES:
            raise ValueError(f"bad sense {self.sense!r}")


@dataclass
class LpModel:
    """A linear (possibly mixed-integer) model in named-variable form."""

    sense: str = "min"
    objective: dict = field(default_factory=dict)
    obj_constant: float = 0.0
    constraints: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)  # name -> (lo, hi); None = inf
    binaries: set = field(default_factory=set)
    comments: list = field(default_factory=list)

    def add(self, name, coeffs, sense, rhs):
        self.constraints.append(Constraint(name, dict(coeffs), sense, float(rhs)))

    def variables(self):
        seen = dict.fromkeys(self.objective)
        for con in self.constraints:
            seen.update(dict.fromkeys(con.coeffs))
        seen.update(dict.fromkeys(self.bounds))
        seen.update(dict.fromkeys(sorted(self.binaries)))
        return list(seen)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _expr(coeffs: dict, constant: float = 0.0) -> str:
    parts = []
    for name, coef in coeffs.items():
        if coef == 0.0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(coef))} {name}")
    if constant != 0.0:
        sign = "-" if constant < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(constant))}")
    if not parts:
        return "0 zero_placeholder"
    if parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    return " ".join(parts)


def write_lp(model: LpModel, path) -> None:
    """Writes the model in CPLEX-style LP format."""
    lines = [f"\\ {c}" for c in model.comments]
    lines.append("Minimize" if model.sense == "min" else "Maximize")
    lines.append(f" obj: {_expr(model.objective, model.obj_constant)}")
    lines.append("Subject To")
    for con in model.constraints:
        lines.append(f" {con.name}: {_expr(con.coeffs)} {con.sense} {_fmt(con.rhs)}")
    lines.append("Bounds")
    for name, (lo, hi) in model.bounds.items():
        lo_s = "-inf" if lo is None else _fmt(lo)
        hi_s = "+inf" if hi is None else _fmt(hi)
        lines.append(f" {lo_s} <= {name} <= {hi_s}")
    if model.binaries:
        lines.append("Binary")
        for name in sorted(model.binaries):
            lines.append(f" {name}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_expr(tokens):
    """Parses sign/coefficient/name token runs into (coeffs, constant)."""
    coeffs: dict = {}
    constant = 0.0
    sign = 1.0
    pending: float | None = None
    for tok in tokens:
        if tok == "+":
            if pending is not None:
                constant += sign * pending
                pending = None
            sign = 1.0
        elif tok == "-":
            if pending is not None:
                constant += sign * pending
                pending = None
            sign = -1.0
        else:
            try:
                val = float(tok)
            except ValueError:
                coef = sign * (1.0 if pending is None else pending)
                coeffs[tok] = coeffs.get(tok, 0.0) + coef
                pending = None
                sign = 1.0
                continue
            if pending is not None:
                constant += sign * pending
                sign = 1.0
            pending = val
    if pending is not None:
        constant += sign * pending
    return coeffs, constant


def read_lp(path) -> LpModel:
    """Reads files produced by write_lp (a subset of the LP grammar)."""
    model = LpModel()
    section = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("\\"):
                model.comments.append(line[1:].strip())
                continue
            low = line.lower()
            if low in ("minimize", "maximize"):
                model.sense = "min" if low == "minimize" else "max"
                section = "obj"
                continue
            if low in ("subject to", "st", "s.t."):
                section = "cons"
                continue
            if low == "bounds":
                section = "bounds"
                continue
            if low == "binary":
                section = "binary"
                continue
            if low == "end":
                break
            if section == "obj":
                _, expr = line.split(":", 1)
                coeffs, const = _parse_expr(expr.split())
                model.objective, model.obj_constant = coeffs, const
            elif section == "cons":
                name, rest = line.split(":", 1)
                for sense in _SENSES:
                    if f" {sense} " in rest:
                        lhs, rhs = rest.rsplit(f" {sense} ", 1)
                        coeffs, const = _parse_expr(lhs.split())
                        model.add(name.strip(), coeffs, sense, float(rhs) - const)
                        break
                else:
                    raise ValueError(f"constraint without sense: {line}")
            elif section == "bounds":
                lo_s, _, name, _, hi_s = line.split()
                lo = None if lo_s in ("-inf", "-Inf") else float(lo_s)
                hi = None if hi_s in ("+inf", "+Inf", "inf") else float(hi_s)
                model.bounds[name] = (lo, hi)
            elif section == "binary":
                model.binaries.add(line)
    return model


def to_matrices(model: LpModel):
    """Converts to arrays for scipy: returns a dict with variable order,
    objective vector/constant, inequality (A_ub x <= b_ub) and equality
    systems, bounds, and a 0/1 integrality vector."""
    names = model.variables()
    idx = {n: i for i, n in enumerate(names)}
    nv = len(names)
    c = np.zeros(nv)
    for n, v in model.objective.items():
        c[idx[n]] = v
    if model.sense == "max":
        c = -c
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for con in model.constraints:
        row = np.zeros(nv)
        for n, v in con.coeffs.items():
            row[idx[n]] = v
        if con.sense == "<=":
            A_ub.append(row)
            b_ub.append(con.rhs)
        elif con.sense == ">=":
            A_ub.append(-row)
            b_ub.append(-con.rhs)
        else:
            A_eq.append(row)
            b_eq.append(con.rhs)
    lb = np.zeros(nv)
    ub = np.full(nv, np.inf)
    for i, n in enumerate(names):
        if n in model.bounds:
            lo, hi = model.bounds[n]
            lb[i] = -np.inf if lo is None else lo
            ub[i] = np.inf if hi is None else hi
        elif n in model.binaries:
            lb[i], ub[i] = 0.0, 1.0
    integrality = np.array([1 if n in model.binaries else 0 for n in names])
    return {
        "names": names,
        "c": c,
        "obj_constant": model.obj_constant if model.sense == "min" else -model.obj_constant,
        "A_ub": np.array(A_ub) if A_ub else np.zeros((0, nv)),
        "b_ub": np.array(b_ub),
        "A_eq": np.array(A_eq) if A_eq else np.zeros((0, nv)),
        "b_eq": np.array(b_eq),
        "lb": lb,
        "ub": ub,
        "integrality": integrality,
    }


# ---------------------------------------------------------------------------
# Regularized-gap knapsack ERM (big-M MIP)
# ---------------------------------------------------------------------------

def emit_reg_gap_erm(
    data, dom: KnapsackDomain, lam: float, vbox: float, path=None, time_limit: int = 300
) -> LpModel:
    """Big-M mixed-integer model of min_V (1/n) sum_i [c_i^T x*(c_i) -
    c_i^T x_i] where each x_i is forced to be the regularized knapsack
    response to d_i = V w_i.

    The prediction bound is M = vbox * max_i ||w_i||_1 (valid for any V in
    the declared box) and M_tau = M / min_j p_j.  The per-point block
    carries (x, tau, q, z, v) with the complementarity and clip-map
    constraints linearized through (q, z, v).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if vbox <= 0:
        raise ValueError("vbox must be positive")
    W = np.atleast_2d(np.asarray(data[0], dtype=float))
    C = np.atleast_2d(np.asarray(data[1], dtype=float))
    n, k = W.shape
    m = dom.m
    if n == 0:
        raise ValueError("empty data")
    if C.shape != (n, m):
        raise ValueError("C shape must be (n, m)")
    p, B = dom.p, dom.B
    M = vbox * float(np.abs(W).sum(axis=1).max())
    M_tau = M / float(p.min())

    model = LpModel(sense="min")
    model.comments.append(
        f"regularized-gap knapsack ERM; lam={_fmt(lam)} vbox={_fmt(vbox)}"
    )
    model.comments.append(f"M={_fmt(M)} M_tau={_fmt(M_tau)}")
    model.comments.append(
        f"suggested solver time limit: {time_limit} seconds (not enforced)"
    )
    for r in range(m):
        for cidx in range(k):
            model.bounds[f"V_{r}_{cidx}"] = (-vbox, vbox)

    XC = solve_knapsack_batch(dom, C)
    model.obj_constant = float(np.sum(C * XC) / n)

    def d_terms(i, j, scale=1.0):
        return {f"V_{j}_{cidx}": scale * W[i, cidx] for cidx in range(k)}

    for i in range(n):
        for j in range(m):
            model.objective[f"x_{i}_{j}"] = -C[i, j] / n
            model.bounds[f"x_{i}_{j}"] = (0.0, 1.0)
        model.bounds[f"tau_{i}"] = (0.0, M_tau)
        model.binaries.add(f"v_{i}")
        model.add(
            f"budget_{i}", {f"x_{i}_{j}": p[j] for j in range(m)}, "<=", B
        )
        # tau (B - p^T x) = 0 via the indicator v.
        model.add(f"tauM_{i}", {f"tau_{i}": 1.0, f"v_{i}": -M_tau}, "<=", 0.0)
        coeffs = {f"x_{i}_{j}": -p[j] for j in range(m)}
        coeffs[f"v_{i}"] = B
        model.add(f"slack_{i}", coeffs, "<=", 0.0)
        for j in range(m):
            model.binaries.add(f"q_{i}_{j}")
            model.binaries.add(f"z_{i}_{j}")
            pj = p[j]
            # q indicates d_j - p_j tau >= 0.
            cts = d_terms(i, j)
            cts[f"tau_{i}"] = -pj
            cts[f"q_{i}_{j}"] = -M
            model.add(f"qup_{i}_{j}", cts, "<=", 0.0)
            cts = d_terms(i, j, -1.0)
            cts[f"tau_{i}"] = pj
            cts[f"q_{i}_{j}"] = M_tau * pj + M
            model.add(f"qdn_{i}_{j}", cts, "<=", M_tau * pj + M)
            # z indicates d_j - p_j tau >= lam.
            cts = d_terms(i, j)
            cts[f"tau_{i}"] = -pj
            cts[f"z_{i}_{j}"] = -M
            model.add(f"zup_{i}_{j}", cts, "<=", lam)
            cts = d_terms(i, j, -1.0)
            cts[f"tau_{i}"] = pj
            cts[f"z_{i}_{j}"] = M_tau * pj + M + lam
            model.add(f"zdn_{i}_{j}", cts, "<=", M_tau * pj + M)
            # Clip-map linkage: q=0 -> x=0; z=1 -> x=1; else lam x = d - p tau.
            model.add(
                f"xq_{i}_{j}", {f"x_{i}_{j}": 1.0, f"q_{i}_{j}": -1.0}, "<=", 0.0
            )
            model.add(
                f"xz_{i}_{j}", {f"x_{i}_{j}": 1.0, f"z_{i}_{j}": -1.0}, ">=", 0.0
            )
            cts = d_terms(i, j, -1.0)
            cts[f"x_{i}_{j}"] = lam
            cts[f"tau_{i}"] = pj
            cts[f"q_{i}_{j}"] = M + M_tau * pj
            model.add(f"clipup_{i}_{j}", cts, "<=", M + M_tau * pj)
            cts = d_terms(i, j)
            cts[f"x_{i}_{j}"] = -lam
            cts[f"tau_{i}"] = -pj
            cts[f"z_{i}_{j}"] = -M
            model.add(f"clipdn_{i}_{j}", cts, "<=", 0.0)
    if path is not None:
        write_lp(model, path)
    return model


def lemma_constraint_names(n: int, m: int):
    """Names of the per-point big-M rows (excludes the plain budget row and
    variable bounds): 2 + 8m rows per point."""
    names = []
    for i in range(n):
        names += [f"tauM_{i}", f"slack_{i}"]
        for j in range(m):
            names += [
                f"qup_{i}_{j}", f"qdn_{i}_{j}", f"zup_{i}_{j}", f"zdn_{i}_{j}",
                f"xq_{i}_{j}", f"xz_{i}_{j}", f"clipup_{i}_{j}", f"clipdn_{i}_{j}",
            ]
    return names


# ---------------------------------------------------------------------------
# Multiclass SPO+ lifted LP
# ---------------------------------------------------------------------------

def emit_multiclass_spo_lp(data, m: int, path=None) -> LpModel:
    """Lifted LP for min_V (1/n) sum_i spo+(Vw_i, c_i) on the unit simplex
    with class-indicator costs c_i = 1_m - e_{label_i}.

    Per point: t_i >= 2 d_{label} - gamma_i with gamma_i capped by
    2 d_{label} and 2 d_{j'} - 1 for the other classes (the inner LP's
    dual), so minimizing t recovers the loss exactly.
    """
    W = np.atleast_2d(np.asarray(data[0], dtype=float))
    raw = np.asarray(data[1])
    n, k = W.shape
    if raw.ndim == 2:
        C = raw.astype(float)
        if C.shape != (n, m):
            raise ValueError("C shape must be (n, m)")
        for row in C:
            vals = np.round(row, 12)
            if not (np.isclose(row.sum(), m - 1) and set(vals) <= {0.0, 1.0}):
                raise ValueError("labels must be class indicators 1_m - e_j")
        labels = np.argmin(C, axis=1)
    else:
        labels = raw.astype(int)
        if np.any(labels < 0) or np.any(labels >= m):
            raise ValueError("labels out of range")
    model = LpModel(sense="min")
    model.comments.append("multiclass SPO+ lifted LP")
    for r in range(m):
        for cidx in range(k):
            model.bounds[f"V_{r}_{cidx}"] = (None, None)
    for i in range(n):
        model.objective[f"t_{i}"] = 1.0 / n
        model.bounds[f"t_{i}"] = (None, None)
        model.bounds[f"gamma_{i}"] = (None, None)
        j = int(labels[i])
        cts = {f"V_{j}_{cidx}": 2.0 * W[i, cidx] for cidx in range(k)}
        cts[f"gamma_{i}"] = -1.0
        cts[f"t_{i}"] = -1.0
        model.add(f"epi_{i}", cts, "<=", 0.0)
        cts = {f"V_{j}_{cidx}": -2.0 * W[i, cidx] for cidx in range(k)}
        cts[f"gamma_{i}"] = 1.0
        model.add(f"gcap_{i}_{j}", cts, "<=", 0.0)
        for jp in range(m):
            if jp == j:
                continue
            cts = {f"V_{jp}_{cidx}": -2.0 * W[i, cidx] for cidx in range(k)}
            cts[f"gamma_{i}"] = 1.0
            model.add(f"gcap_{i}_{jp}", cts, "<=", -1.0)
    if path is not None:
        write_lp(model, path)
    return model
