"""Dense LPs for the ex-ante relaxation and the serving-probability programs.

All variables are nonnegative; any other bound is written as a row.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from magician.core.errors import DomainError, SolverError, StateCapError
from magician.core.instance import MultiResourceInstance, ScenarioDist, SingleResourceInstance
from magician.core.run_config import setting
from magician.models.reports import Report

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-10
FEAS_TOL = setting("tolerances.lp_feasibility", 1e-8)
OBJ_TOL = setting("tolerances.lp_objective", 1e-6)
VAR_CAP = setting("caps.lp_variables", 100000)

SIGNS = ("<=", ">=", "=")


@dataclass
class LinearProgram:
    sense: str  # "max" | "min"
    c: np.ndarray
    A: np.ndarray
    signs: List[str]
    b: np.ndarray
    names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(len(self.signs), self.c.size)
        self.b = np.asarray(self.b, dtype=float)
        if self.sense not in ("max", "min"):
            raise DomainError(f"sense must be 'max' or 'min', got {self.sense!r}")
        if self.b.size != len(self.signs):
            raise DomainError("rhs and signs must have equal length")
        if any(s not in SIGNS for s in self.signs):
            raise DomainError(f"unknown constraint sense in {set(self.signs)}")
        if not self.names:
            self.names = [f"x{j + 1}" for j in range(self.c.size)]
        if len(self.names) != self.c.size or len(set(self.names)) != len(self.names):
            raise DomainError("variable names must be unique, one per column")
        self._index = {n: j for j, n in enumerate(self.names)}

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return len(self.signs)

    def index(self, name: str) -> int:
        return self._index[name]

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of any row or of nonnegativity."""
        lhs = self.A @ x
        viol = np.zeros(self.n_rows)
        for i, s in enumerate(self.signs):
            if s == "<=":
                viol[i] = lhs[i] - self.b[i]
            elif s == ">=":
                viol[i] = self.b[i] - lhs[i]
            else:
                viol[i] = abs(lhs[i] - self.b[i])
        return float(max(viol.max(initial=0.0), -x.min(initial=0.0), 0.0))


@dataclass
class SimplexResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    objective: Optional[float] = None
    x: Optional[np.ndarray] = None
    iterations: int = 0
    residual: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, lp: LinearProgram, name: str) -> float:
        return float(self.x[lp.index(name)])


class _LpBuilder:
    """Collects sparse rows keyed by variable name, then densifies."""

    def __init__(self, sense: str):
        self.sense = sense
        self.names: List[str] = []
        self.cols: Dict[str, int] = {}
        self.obj: Dict[int, float] = {}
        self.rows: List[Tuple[Dict[int, float], str, float]] = []

    def var(self, name: str, obj: float = 0.0) -> int:
        if name not in self.cols:
            self.cols[name] = len(self.names)
            self.names.append(name)
            if len(self.names) > VAR_CAP:
                raise StateCapError(f"LP exceeds {VAR_CAP} variables")
        j = self.cols[name]
        if obj:
            self.obj[j] = self.obj.get(j, 0.0) + obj
        return j

    def row(self, coeffs: Dict[str, float], sign: str, rhs: float) -> None:
        dense: Dict[int, float] = {}
        for name, a in coeffs.items():
            j = self.var(name)
            dense[j] = dense.get(j, 0.0) + a
        self.rows.append((dense, sign, rhs))

    def build(self) -> LinearProgram:
        n = len(self.names)
        c = np.zeros(n)
        for j, v in self.obj.items():
            c[j] = v
        A = np.zeros((len(self.rows), n))
        for i, (coeffs, _, _) in enumerate(self.rows):
            for j, a in coeffs.items():
                A[i, j] = a
        return LinearProgram(
            sense=self.sense,
            c=c,
            A=A,
            signs=[s for _, s, _ in self.rows],
            b=[r for _, _, r in self.rows],
            names=list(self.names),
        )


# -----------------------------------------------------
# Two-phase dense simplex
# -----------------------------------------------------


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row, :] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row, :])


def _enter(z: np.ndarray, bland: bool) -> int:
    red = z[:-1]
    if bland:
        idx = np.flatnonzero(red < -PIVOT_TOL)
        return int(idx[0]) if idx.size else -1
    j = int(np.argmin(red))
    return j if red[j] < -PIVOT_TOL else -1


def _leave(T: np.ndarray, col: int, basis: List[int]) -> int:
    a = T[:-1, col]
    rows = np.flatnonzero(a > PIVOT_TOL)
    if rows.size == 0:
        return -1
    ratios = T[rows, -1] / a[rows]
    best = ratios.min()
    ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
    return int(min(ties, key=lambda r: basis[r]))


def _run(T: np.ndarray, basis: List[int], max_iter: int, bland_after: int) -> Tuple[str, int]:
    for it in range(max_iter):
        j = _enter(T[-1, :], bland=it >= bland_after)
        if j == -1:
            return "optimal", it
        i = _leave(T, j, basis)
        if i == -1:
            return "unbounded", it
        _pivot(T, i, j)
        basis[i] = j
    return "iteration_limit", max_iter


def simplex_solve(lp: LinearProgram, tol: float = FEAS_TOL) -> SimplexResult:
    """Two-phase tableau simplex; Dantzig pricing, then Bland's rule to break cycling."""
    m, n = lp.A.shape
    A, b, signs = lp.A.copy(), lp.b.copy(), list(lp.signs)
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    for i in np.flatnonzero(neg):
        signs[i] = {"<=": ">=", ">=": "<=", "=": "="}[signs[i]]

    n_slack = sum(s != "=" for s in signs)
    n_art = sum(s != "<=" for s in signs)
    total = n + n_slack + n_art
    T = np.zeros((m + 1, total + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis: List[int] = []
    art_start = n + n_slack
    si, ai = n, art_start
    for i, s in enumerate(signs):
        if s == "<=":
            T[i, si] = 1.0
            basis.append(si)
            si += 1
            continue
        if s == ">=":
            T[i, si] = -1.0
            si += 1
        T[i, ai] = 1.0
        basis.append(ai)
        ai += 1

    max_iter = 50 * (m + total) + 100
    bland_after = 2 * (m + total)
    iterations = 0

    # phase 1: maximize -sum(artificials)
    T[-1, art_start:total] = 1.0
    for i, bc in enumerate(basis):
        if bc >= art_start:
            T[-1, :] -= T[i, :]
    status, it = _run(T, basis, max_iter, bland_after)
    iterations += it
    if status != "optimal":
        return SimplexResult(status=status, iterations=iterations)
    if T[-1, -1] < -tol:
        logger.debug(f"🔍 phase 1 ends at {T[-1, -1]:.3e}: infeasible")
        return SimplexResult(status="infeasible", iterations=iterations)

    # drive artificials out of the basis; rows that cannot pivot are redundant
    keep = np.ones(m, dtype=bool)
    for i, bc in enumerate(basis):
        if bc < art_start:
            continue
        j = int(np.argmax(np.abs(T[i, :art_start]))) if art_start else 0
        if art_start and abs(T[i, j]) > PIVOT_TOL:
            _pivot(T, i, j)
            basis[i] = j
        else:
            keep[i] = False
    rows = np.flatnonzero(keep)
    T2 = np.vstack([T[rows][:, list(range(art_start)) + [total]], np.zeros((1, art_start + 1))])
    basis = [basis[i] for i in rows]

    # phase 2
    cvec = lp.c if lp.sense == "max" else -lp.c
    T2[-1, :n] = -cvec
    for i, bc in enumerate(basis):
        if bc < n and cvec[bc] != 0.0:
            T2[-1, :] += cvec[bc] * T2[i, :]
    status, it = _run(T2, basis, max_iter, bland_after)
    iterations += it
    if status != "optimal":
        return SimplexResult(status=status, iterations=iterations)

    x = np.zeros(art_start)
    for i, bc in enumerate(basis):
        x[bc] = T2[i, -1]
    x = np.where(np.abs(x) < 1e-13, 0.0, x)[:n]
    x = np.maximum(x, 0.0)
    obj = float(T2[-1, -1]) if lp.sense == "max" else -float(T2[-1, -1])
    res = SimplexResult(
        status="optimal", objective=obj, x=x, iterations=iterations, residual=lp.residual(x)
    )
    if res.residual > tol:
        logger.warning(f"⚠️ simplex residual {res.residual:.3e} above {tol:.1e}")
    return res


def lp_optimum(lp: LinearProgram, tol: float = FEAS_TOL) -> float:
    res = simplex_solve(lp, tol)
    if not res.optimal:
        raise SolverError(res.status)
    return res.objective


# -----------------------------------------------------
# Text export
# -----------------------------------------------------


def to_lp_text(lp: LinearProgram) -> str:
    lines = [lp.sense, " ".join(repr(float(v)) for v in lp.c)]
    for row, s, rhs in zip(lp.A, lp.signs, lp.b):
        lines.append(f"{' '.join(repr(float(v)) for v in row)} {s} {float(rhs)!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_lp_text(text: str) -> LinearProgram:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if len(lines) < 2:
        raise DomainError("LP text needs a sense line and an objective line")
    sense = lines[0].lower()
    if sense not in ("min", "max"):
        raise DomainError("First line must be 'min' or 'max'")
    c = [float(v) for v in lines[1].split()]
    A, signs, b = [], [], []
    for ln in lines[2:]:
        if ln.lower() == "end":
            break
        for s in SIGNS:
            if s in ln:
                left, rhs = ln.split(s)
                break
        else:
            raise DomainError("Constraint line must contain <=, >=, or =")
        coeffs = [float(v) for v in left.split()]
        if len(coeffs) != len(c):
            raise DomainError(f"Constraint has {len(coeffs)} coefficients, expected {len(c)}")
        A.append(coeffs)
        signs.append(s)
        b.append(float(rhs))
    return LinearProgram(sense=sense, c=c, A=np.array(A).reshape(len(A), len(c)), signs=signs, b=b)


# -----------------------------------------------------
# Builders
# -----------------------------------------------------


def build_up_lp(mi: MultiResourceInstance) -> LinearProgram:
    """Ex-ante relaxation: serve scenario s of query t at resource j with fraction x."""
    U = mi.grid.units
    lp = _LpBuilder("max")
    budget: List[Dict[str, float]] = [{} for _ in range(mi.m)]
    for t, q in enumerate(mi.queries):
        for s, sc in enumerate(q):
            if sc.p <= 0:
                continue
            assign: Dict[str, float] = {}
            for j in range(mi.m):
                name = f"x[{t},{j},{s}]"
                lp.var(name, obj=sc.p * sc.r[j])
                assign[name] = 1.0
                if sc.d_units[j]:
                    budget[j][name] = sc.p * sc.d_units[j] / U
            lp.row(assign, "<=", 1.0)
    for j in range(mi.m):
        if budget[j]:
            lp.row(budget[j], "<=", 1.0)
    return lp.build()


def build_dual_pk(p: Sequence[float], k: int) -> LinearProgram:
    """max theta over ex-ante serving probabilities x[l,t] of the k-unit problem."""
    p = np.asarray(p, dtype=float)
    if p.sum() > k + 1e-12:
        raise DomainError(f"sum of p is {p.sum():.12g} > k={k}")
    T = p.size
    lp = _LpBuilder("max")
    lp.var("theta", obj=1.0)
    for t in range(T):
        for l in range(1, k + 1):
            lp.var(f"x[{l},{t}]")
    for t in range(T):
        row = {"theta": p[t]}
        row.update({f"x[{l},{t}]": -1.0 for l in range(1, k + 1)})
        lp.row(row, "<=", 0.0)
    for t in range(T):
        row = {f"x[1,{t}]": 1.0}
        for tau in range(t):
            row[f"x[1,{tau}]"] = p[t]
        lp.row(row, "<=", p[t])
        for l in range(2, k + 1):
            row = {f"x[{l},{t}]": 1.0}
            for tau in range(t):
                row[f"x[{l - 1},{tau}]"] = -p[t]
                row[f"x[{l},{tau}]"] = p[t]
            lp.row(row, "<=", 0.0)
    return lp.build()


def build_primal_pk(p: Sequence[float], k: int) -> LinearProgram:
    """min sum_t p_t beta[1,t] over marginal values beta and normalized xi."""
    p = np.asarray(p, dtype=float)
    if p.sum() > k + 1e-12:
        raise DomainError(f"sum of p is {p.sum():.12g} > k={k}")
    T = p.size
    lp = _LpBuilder("min")
    for l in range(1, k + 1):
        for t in range(T):
            lp.var(f"beta[{l},{t}]", obj=p[t] if l == 1 else 0.0)
    for t in range(T):
        lp.var(f"xi[{t}]")
    for l in range(1, k + 1):
        for t in range(T):
            row = {f"beta[{l},{t}]": 1.0, f"xi[{t}]": -1.0}
            for tau in range(t + 1, T):
                row[f"beta[{l},{tau}]"] = p[tau]
                if l < k:
                    row[f"beta[{l + 1},{tau}]"] = -p[tau]
            lp.row(row, ">=", 0.0)
    lp.row({f"xi[{t}]": p[t] for t in range(T)}, "=", 1.0)
    return lp.build()


def reachable_states(instance: SingleResourceInstance) -> List[List[int]]:
    """Remaining-capacity units reachable at the start of each period (plus after the last)."""
    U = instance.grid.units
    states = [{U}]
    for q in instance.queries:
        sizes = list(q.size_pmf())
        nxt = set(states[-1])
        for c in states[-1]:
            nxt.update(c - d for d in sizes if d <= c)
        states.append(nxt)
    return [sorted(s, reverse=True) for s in states]


def build_dual_pD(instance: SingleResourceInstance) -> LinearProgram:
    """max theta over alpha[t,d,c], the probability of serving size d at remaining capacity c."""
    U = instance.grid.units
    states = reachable_states(instance)
    lp = _LpBuilder("max")
    lp.var("theta", obj=1.0)
    served: List[Dict[int, List[str]]] = []  # t -> c -> alpha names leaving c
    arriving: List[Dict[int, List[str]]] = []  # t -> c -> alpha names entering c
    for t, q in enumerate(instance.queries):
        out_c: Dict[int, List[str]] = {}
        in_c: Dict[int, List[str]] = {}
        for d in q.size_pmf():
            for c in states[t]:
                if c >= d:
                    name = f"alpha[{t},{d},{c}]"
                    lp.var(name)
                    out_c.setdefault(c, []).append(name)
                    in_c.setdefault(c - d, []).append(name)
        served.append(out_c)
        arriving.append(in_c)

    for t, q in enumerate(instance.queries):
        for d, pd in q.size_pmf().items():
            row = {"theta": pd}
            for c in states[t]:
                if c >= d:
                    row[f"alpha[{t},{d},{c}]"] = -1.0
            lp.row(row, "<=", 0.0)
            for c in states[t]:
                if c < d:
                    continue
                row = {f"alpha[{t},{d},{c}]": 1.0}
                for tau in range(t):
                    for name in served[tau].get(c, []):
                        row[name] = row.get(name, 0.0) + pd
                    if c < U:
                        for name in arriving[tau].get(c, []):
                            row[name] = row.get(name, 0.0) - pd
                lp.row(row, "<=", pd if c == U else 0.0)
    logger.debug(f"📝 Dual(p,D) with {len(lp.names)} variables and {len(lp.rows)} rows")
    return lp.build()


def build_primal_pD(instance: SingleResourceInstance) -> LinearProgram:
    """min V[1,U] over value-to-go V, marginal gains W and normalized rewards r."""
    U = instance.grid.units
    T = instance.T
    states = reachable_states(instance)
    lp = _LpBuilder("min")
    lp.var(f"V[0,{U}]", obj=1.0)
    norm: Dict[str, float] = {}
    for t, q in enumerate(instance.queries):
        pmf = q.size_pmf()
        for d, pd in pmf.items():
            norm[f"r[{t},{d}]"] = pd
        for c in states[t]:
            row = {f"V[{t},{c}]": 1.0}
            if t + 1 < T:
                row[f"V[{t + 1},{c}]"] = -1.0
            for d, pd in pmf.items():
                if d > c:
                    continue
                w = f"W[{t},{d},{c}]"
                row[w] = -pd
                wrow = {w: 1.0, f"r[{t},{d}]": -1.0}
                if t + 1 < T:
                    wrow[f"V[{t + 1},{c - d}]"] = -1.0
                    wrow[f"V[{t + 1},{c}]"] = wrow.get(f"V[{t + 1},{c}]", 0.0) + 1.0
                lp.row(wrow, ">=", 0.0)
            lp.row(row, ">=", 0.0)
    if norm:
        lp.row(norm, "=", 1.0)
    return lp.build()


def rewards_from_primal(
    instance: SingleResourceInstance, lp: LinearProgram, res: SimplexResult
) -> SingleResourceInstance:
    """Instance with the same size laws and the minimizing rewards r[t,d]."""
    queries = []
    for t, q in enumerate(instance.queries):
        pmf = q.size_pmf()
        queries.append(
            ScenarioDist(
                support=[(res.value(lp, f"r[{t},{d}]"), d) for d in pmf],
                probs=list(pmf.values()),
            )
        )
    return SingleResourceInstance(grid=instance.grid, queries=queries)


def lemma3_check(instance: SingleResourceInstance, tol: float = OBJ_TOL) -> Report:
    """Optimal online ratio at the worst rewards equals the Dual(p,D) optimum."""
    from magician.analysis.oracle import dp_value, up_value

    try:
        dual = simplex_solve(build_dual_pD(instance))
        primal_lp = build_primal_pD(instance)
        primal = simplex_solve(primal_lp)
        if not (dual.optimal and primal.optimal):
            raise SolverError(f"dual {dual.status}, primal {primal.status}")
        worst = rewards_from_primal(instance, primal_lp, primal)
        up_worst = up_value(worst)
        ratio_worst = dp_value(worst).value / up_worst if up_worst > 0 else 1.0
        up = up_value(instance)
        ratio = dp_value(instance).value / up if up > 0 else 1.0
    except (SolverError, StateCapError) as e:
        return Report(success=False, message=f"❌ {e}", error=str(e))

    violations = []
    if abs(ratio_worst - dual.objective) > tol:
        violations.append(f"worst-reward DP ratio {ratio_worst:.9f} != dual {dual.objective:.9f}")
    if abs(primal.objective - dual.objective) > tol:
        violations.append(f"primal {primal.objective:.9f} != dual {dual.objective:.9f}")
    if ratio < dual.objective - tol:
        violations.append(f"DP ratio {ratio:.9f} below dual {dual.objective:.9f}")
    ok = not violations
    return Report(
        success=ok,
        message="✅ DP ratio matches Dual(p,D)" if ok else f"❌ {len(violations)} mismatch(es)",
        data={
            "dual_optimum": dual.objective,
            "primal_optimum": primal.objective,
            "dp_ratio_worst_rewards": ratio_worst,
            "dp_ratio": ratio,
        },
        violations=violations,
    )
