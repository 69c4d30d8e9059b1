"""k-unit contention resolution: the Conservative Magician and its optimality certificate.

Levels l = 1..k and periods t = 1..T are stored 0-based: x[l-1][t-1].
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from magician.core.errors import DomainError, InvariantError, UnsupportedInstanceError
from magician.core.run_config import setting
from magician.models.reports import CertificateReport
from magician.policies.base_policy import OnlinePolicy

logger = logging.getLogger(__name__)

THETA_TOL = setting("bisection.theta_tol", 1e-9)
MAX_ITER = setting("bisection.max_iter", 200)
BREAK_SLACK = setting("bisection.breakpoint_tol", 1e-12)
SLACKNESS_TOL = setting("tolerances.slackness", 1e-8)


@dataclass(frozen=True)
class CandidateSolution:
    k: int
    theta: float
    p: np.ndarray
    x: np.ndarray  # shape (k, T)
    breakpoints: List[int]  # t_1 = 0, t_2, ..., t_{k+1}

    @property
    def T(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class DualCertificate:
    beta: np.ndarray  # shape (k, T)
    xi: np.ndarray  # shape (T,)
    B: np.ndarray  # B[l-1][q], q = 0..k
    A: np.ndarray  # A[l-1][q][t-1]
    delta: np.ndarray  # delta[l1-1][l2-1]
    phi: np.ndarray  # phi[l-1]
    R: float
    breakpoints: List[int] = field(default_factory=list)

    def objective(self, p: np.ndarray) -> float:
        return float(np.dot(p, self.beta[0]))

    def scaled(self, factor: float) -> "DualCertificate":
        return DualCertificate(
            beta=self.beta * factor,
            xi=self.xi * factor,
            B=self.B,
            A=self.A,
            delta=self.delta,
            phi=self.phi,
            R=self.R * factor,
            breakpoints=self.breakpoints,
        )


def _as_probabilities(p: Sequence[float], k: int) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1:
        raise DomainError("p must be a vector")
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if np.any(arr < 0) or np.any(arr > 1):
        raise DomainError("every p_t must lie in [0, 1]")
    if arr.sum() > k + 1e-12:
        raise DomainError(f"sum of p is {arr.sum():.12g} > k={k}")
    return arr


def build_candidate(p: Sequence[float], k: int, theta: float) -> CandidateSolution:
    """Three-stage construction of x_{l,t}(theta) level by level.

    Level l serves theta*p_t minus what lower levels serve until the capacity
    left at level l-1 binds, then serves everything that arrives there.
    The top level never switches.
    """
    p = _as_probabilities(p, k)
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    T = p.size
    pl = p.tolist()
    x = [[0.0] * T for _ in range(k)]
    lower = [0.0] * T  # sum of x over levels below the current one
    prev_cum = [1.0] * (T + 1)  # cumulative x of level l-1, with level 0 fixed at 1
    breakpoints = [0]

    for l in range(k):
        xl = x[l]
        start = breakpoints[l]
        own = 0.0  # cumulative of level l up to t
        cum = [0.0] * (T + 1)
        t = start
        nxt = T
        while t < T:
            cand = theta * pl[t] - lower[t]
            cap = pl[t] * (prev_cum[t] - own)
            if cand - cap > BREAK_SLACK and nxt == T:
                nxt = t
                if l < k - 1:
                    break
            xl[t] = cand
            own += cand
            t += 1
            cum[t] = own
        for tau in range(t, T):
            xl[tau] = pl[tau] * (prev_cum[tau] - own)
            own += xl[tau]
            cum[tau + 1] = own
        breakpoints.append(nxt)
        for tau in range(T):
            lower[tau] += xl[tau]
        prev_cum = cum

    return CandidateSolution(
        k=k, theta=float(theta), p=p, x=np.array(x).reshape(k, T), breakpoints=breakpoints
    )


def theta_gap(p: Sequence[float], k: int, theta: float) -> float:
    """Sum_{tau<=T-1} x_k(theta) - (1 - theta); increasing in theta."""
    c = build_candidate(p, k, theta)
    return float(c.x[k - 1, : c.T - 1].sum()) - (1.0 - theta)


def is_feasible(c: CandidateSolution) -> bool:
    return float(c.x[c.k - 1, : c.T - 1].sum()) <= 1.0 - c.theta + 1e-12


def solve_theta_star(p: Sequence[float], k: int, tol: float = THETA_TOL) -> float:
    """Largest theta whose candidate is feasible, by bisection.

    Returns the feasible end of the final bracket.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    p = _as_probabilities(p, k)
    if p.size == 0 or is_feasible(build_candidate(p, k, 1.0)):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(MAX_ITER):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if is_feasible(build_candidate(p, k, mid)):
            lo = mid
        else:
            hi = mid
    logger.debug(f"🔍 theta* in [{lo:.12f}, {hi:.12f}] for T={p.size}, k={k}")
    return lo


def split_probability(p: Sequence[float], q: int, sigma: float) -> np.ndarray:
    """Replace p_q (1-based) by the pair (sigma*p_q, (1-sigma)*p_q)."""
    arr = np.asarray(p, dtype=float)
    if not 1 <= q <= arr.size:
        raise DomainError(f"q must be in 1..{arr.size}, got {q}")
    if not 0.0 <= sigma <= 1.0:
        raise DomainError(f"sigma must be in [0, 1], got {sigma}")
    i = q - 1
    return np.concatenate([arr[:i], [sigma * arr[i], (1.0 - sigma) * arr[i]], arr[i + 1 :]])


def split_to_uniform(p: Sequence[float], N: int) -> np.ndarray:
    """Split every p_t = n_t/N into n_t copies of 1/N (p_t must be multiples of 1/N)."""
    out = np.asarray(p, dtype=float)
    q = 1
    while q <= out.size:
        n = round(out[q - 1] * N)
        if abs(out[q - 1] * N - n) > 1e-9:
            raise DomainError(f"p_{q} = {out[q - 1]} is not a multiple of 1/{N}")
        if n > 1:
            out = split_probability(out, q, 1.0 / n)
        q += 1
    return out[out > 0]


# -----------------------------------------------------
# Dual certificate
# -----------------------------------------------------


def _elementary_symmetric(odds: np.ndarray, order: int) -> np.ndarray:
    """e_0..e_order of the given values, by the usual one-pass recursion."""
    e = np.zeros(order + 1)
    e[0] = 1.0
    for v in odds:
        e[1:] = e[1:] + v * e[:-1]
    return e


def _window_sums(p: np.ndarray, lo: int, hi: int, k: int):
    """B_q over window (lo, hi] and A_q(t) for t in 0..T (sum over (t, hi])."""
    T = p.size
    B = np.zeros(k + 1)
    A = np.zeros((k + 1, T))
    if hi <= lo:
        B[0] = 1.0
        return B, A
    window = p[lo:hi]
    odds = window / (1.0 - window)
    B = _elementary_symmetric(odds, k) * float(np.prod(1.0 - window))
    # A_q(t) for t in lo+1..hi uses the sub-window (t, hi]
    for t in range(lo + 1, hi + 1):
        sub = p[t:hi]
        A[:, t - 1] = _elementary_symmetric(sub / (1.0 - sub), k) * float(np.prod(1.0 - sub))
    return B, A


def _delta_table(B: np.ndarray, k: int) -> np.ndarray:
    """delta[l1][l2] (1-based in the math, 0-based here) via chained sums of B products."""
    delta = np.zeros((k + 1, k + 1))
    for l1 in range(1, k + 1):
        if l1 < k:
            delta[l1, k] = 1.0
    for l2 in range(1, k):
        for l1 in range(1, l2):
            # w_0 ranges over l1+1..l2; chain w_j ranges over w_{j-1}..l2+j
            f = np.zeros(k + 1)
            f[l1 + 1 : l2 + 1] = 1.0
            for j in range(1, k - l2):
                level = l2 + j
                g = np.zeros(k + 1)
                for w in range(0, level + 1):
                    g[w] = sum(f[v] * B[level, w - v] for v in range(0, w + 1))
                f = g
            delta[l1, l2] = sum(f[w] * B[k, k - w] for w in range(0, k + 1) if k - w >= 0)
    return delta


def build_dual_certificate(p: Sequence[float], k: int, theta_star: float) -> DualCertificate:
    """Feasible solution of the minimization LP matching the candidate at theta*.

    beta_{l,t} vanishes up to t_{l+1}; xi is constant on each level window
    (t_l, t_{l+1}] and R normalizes sum_t p_t xi_t = 1.
    """
    p = _as_probabilities(p, k)
    T = p.size
    if T == 0:
        raise UnsupportedInstanceError("empty probability vector")
    if np.any(p >= 1.0):
        raise UnsupportedInstanceError("certificate needs every p_t < 1; use the LP path")
    if p[-1] <= 0.0:
        raise UnsupportedInstanceError("certificate needs p_T > 0")

    cand = build_candidate(p, k, theta_star)
    # windows (t_l, t_{l+1}] with t_{k+1} = T-1; index 1..k, clamp at T-1
    bps = [min(b, T - 1) for b in cand.breakpoints[:k]] + [T - 1]
    for l in range(1, k + 1):
        bps[l] = max(bps[l], bps[l - 1])

    B = np.zeros((k + 1, k + 1))
    A = np.zeros((k + 1, k + 1, T))
    for l in range(1, k + 1):
        B[l], A[l] = _window_sums(p, bps[l - 1], bps[l], k)

    delta = _delta_table(B, k)
    phi = np.zeros(k + 1)
    phi[k] = 1.0
    for l in range(1, k):
        total = 0.0
        for q in range(l + 1, k + 1):
            for w in range(l + 1, q + 1):
                total += (delta[w - 1, q] - delta[w, q]) * (1.0 - B[q, : w - l].sum())
        phi[l] = total

    # unnormalized (R = 1), then scale
    beta = np.zeros((k, T))
    xi = np.zeros(T)
    pT = p[-1]
    for l in range(1, k + 1):
        xi[bps[l - 1] : bps[l]] = phi[l] * pT
    xi[T - 1] = 1.0
    beta[:, T - 1] = 1.0
    for l2 in range(2, k + 1):
        lo, hi = bps[l2 - 1], bps[l2]
        for l1 in range(1, l2):
            coeff = np.zeros(T)
            for w in range(l1, l2):
                coeff += delta[w, l2] * A[l2, w - l1]
            beta[l1 - 1, lo:hi] = pT * coeff[lo:hi]
    norm = float(np.dot(p, xi))
    R = 1.0 / norm
    logger.debug(f"📝 certificate windows {bps}, R={R:.6g}")
    return DualCertificate(
        beta=beta * R,
        xi=xi * R,
        B=B[1:, :],
        A=A[1:],
        delta=delta[1:, 1:],
        phi=phi[1:],
        R=R,
        breakpoints=bps,
    )


def verify_certificate(
    c: CandidateSolution, d: DualCertificate, p: Sequence[float], k: int, tol: float = SLACKNESS_TOL
) -> CertificateReport:
    """Feasibility of both sides, complementary slackness and equal objectives."""
    p = np.asarray(p, dtype=float)
    T = p.size
    x, beta, xi = c.x, d.beta, d.xi
    violations: List[str] = []

    # maximization side
    occ = np.zeros((k, T))  # occupancy of state l-1 at the start of t
    cum = np.cumsum(x, axis=1)
    prev = np.concatenate([np.zeros((k, 1)), cum[:, :-1]], axis=1)
    occ[0] = 1.0 - prev[0]
    if k > 1:
        occ[1:] = prev[:-1] - prev[1:]
    cap_slack = p * occ - x  # >= 0
    serve_slack = x.sum(axis=0) - c.theta * p  # >= 0
    primal_res = max(
        float(-cap_slack.min(initial=0.0)),
        float(-serve_slack.min(initial=0.0)),
        float(-x.min(initial=0.0)),
    )
    if not is_feasible(c):
        violations.append("candidate fails the top-level capacity test")
    primal_ok = primal_res <= tol and is_feasible(c)
    if primal_res > tol:
        violations.append(f"maximization-side residual {primal_res:.3e}")

    # minimization side
    tail = np.zeros((k + 1, T))  # sum_{tau>t} p_tau beta_{l,tau}
    weighted = beta * p
    tail[:k] = np.cumsum(weighted[:, ::-1], axis=1)[:, ::-1] - weighted
    reduced = beta + tail[:k] - tail[1:] - xi  # >= 0
    norm_gap = abs(float(np.dot(p, xi)) - 1.0)
    dual_res = max(
        float(-reduced.min(initial=0.0)),
        float(-beta.min(initial=0.0)),
        float(-xi.min(initial=0.0)),
    )
    dual_ok = dual_res <= tol and norm_gap <= 1e-9
    if dual_res > tol:
        violations.append(f"minimization-side residual {dual_res:.3e}")
    if norm_gap > 1e-9:
        violations.append(f"normalization off by {norm_gap:.3e}")

    slack = max(
        float(np.abs(beta * cap_slack).max(initial=0.0)),
        float(np.abs(x * reduced).max(initial=0.0)),
        float(np.abs(xi * serve_slack).max(initial=0.0)),
    )
    if slack > tol:
        violations.append(f"slackness product {slack:.3e}")
    gap = abs(d.objective(p) - c.theta)
    if gap > tol:
        violations.append(f"objective gap {gap:.3e}")

    ok = not violations
    return CertificateReport(
        success=ok,
        message="✅ certificate verified" if ok else f"❌ {len(violations)} check(s) failed",
        theta_star=c.theta,
        primal_feasible=primal_ok,
        dual_feasible=dual_ok,
        slackness_max=slack,
        objective_gap=gap,
        violations=violations,
    )


# -----------------------------------------------------
# Executable policy
# -----------------------------------------------------


class MagicianPolicy(OnlinePolicy):
    """Serves an active query with probability q[s][t] when s units are in use."""

    name = "magician"

    def __init__(self, theta: float, serve_prob: np.ndarray):
        self.theta = theta
        self.serve_prob = serve_prob
        self.k = serve_prob.shape[0]
        super().__init__()

    def _validate(self) -> None:
        if np.any(self.serve_prob < 0) or np.any(self.serve_prob > 1 + 1e-10):
            raise InvariantError("serve probabilities must lie in [0, 1]")

    def reset(self) -> None:
        self.used = 0

    def decide(self, t: int, reward: float, size_units: int, draw: float) -> bool:
        if size_units == 0:
            return False
        if self.used >= self.k:
            return False
        serve = draw < self.serve_prob[self.used, t]
        if serve:
            self.used += 1
        return serve


def magician_policy(p: Sequence[float], k: int, theta: float) -> MagicianPolicy:
    c = build_candidate(p, k, theta)
    if not is_feasible(c):
        raise DomainError(f"theta={theta} is infeasible for this p; lower it to theta*")
    p = c.p
    cum = np.cumsum(c.x, axis=1)
    prev = np.concatenate([np.zeros((k, 1)), cum[:, :-1]], axis=1)
    w = np.zeros((k, c.T))
    w[0] = 1.0 - prev[0]
    if k > 1:
        w[1:] = prev[:-1] - prev[1:]
    denom = p * w
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(denom > 0, c.x / np.where(denom > 0, denom, 1.0), 0.0)
    excess = float(q.max(initial=0.0)) - 1.0
    if excess > 1e-8:
        raise InvariantError(f"serve probability exceeds 1 by {excess:.3e}")
    if excess > 1e-12:
        logger.warning(f"⚠️ Clamping serve probabilities, max excess {excess:.3e}")
    q = np.clip(q, 0.0, 1.0)
    return MagicianPolicy(theta, q)


def occupancy(policy: MagicianPolicy, p: Sequence[float]) -> np.ndarray:
    """Distribution of units in use at the start of each period, shape (T+1, k+1)."""
    p = np.asarray(p, dtype=float)
    k, T = policy.k, p.size
    dist = np.zeros((T + 1, k + 1))
    dist[0, 0] = 1.0
    for t in range(T):
        move = p[t] * policy.serve_prob[:, t] * dist[t, :k]
        dist[t + 1] = dist[t]
        dist[t + 1, :k] -= move
        dist[t + 1, 1:] += move
    return dist


def ex_ante_service(policy: MagicianPolicy, p: Sequence[float]) -> np.ndarray:
    """Unconditional probability that each query is served."""
    p = np.asarray(p, dtype=float)
    dist = occupancy(policy, p)
    return np.array(
        [float(np.dot(p[t] * policy.serve_prob[:, t], dist[t, : policy.k])) for t in range(p.size)]
    )
