"""Poisson-limit worst case of the k-unit problem.

ỹ_l(t) is the probability that at least l units are in use at time t when
arrivals form a unit-rate Poisson stream over [0, k]. Each level is zero up
to its start t_l, then polynomial times e^{-t} in two pieces split at t_{l+1}:

    pre:  ζ_l + θt + Σ_{q≤l-2} ζ_{l,q} t^q e^{-t}
    post: 1 + Σ_{q≤l-1} ψ_{l,q} t^q e^{-t}
"""

import logging
import math
from typing import List

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, Field
from scipy.optimize import OptimizeResult, bisect

from magician.core.errors import DomainError, InvariantError
from magician.core.run_config import setting
from magician.policies.kunit import solve_theta_star

logger = logging.getLogger(__name__)

K_WARNING = setting("caps.ode_k_warning", 16)
THETA_TOL = setting("bisection.theta_tol", 1e-9)
THETA_BRACKET = (1e-6, 1.0 - 1e-6)


class OdePieces(BaseModel):
    k: int = Field(gt=0)
    theta: float
    breakpoints: List[float]  # t_1..t_{k+1}
    zeta: List[float]  # ζ_l
    zeta_poly: List[List[float]]  # ζ_{l,q}, q = 0..l-2
    psi: List[List[float]]  # ψ_{l,q}, q = 0..l-1

    def pre(self, l: int, t: float) -> float:
        i = l - 1
        poly = P.polyval(t, self.zeta_poly[i]) if self.zeta_poly[i] else 0.0
        return self.zeta[i] + self.theta * t + poly * math.exp(-t)

    def post(self, l: int, t: float) -> float:
        return 1.0 + P.polyval(t, self.psi[l - 1]) * math.exp(-t)


def _check_monotone(pieces: OdePieces, l: int, lo: float, hi: float) -> None:
    grid = np.linspace(lo, hi, 65)
    vals = np.array([pieces.pre(l, t) for t in grid])
    drop = float(np.max(vals[:-1] - vals[1:], initial=0.0))
    if drop > 1e-10:
        raise InvariantError(f"level {l} pre-breakpoint form decreases by {drop:.3e}")


def solve_pieces(k: int, theta: float) -> OdePieces:
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if k > K_WARNING:
        logger.warning(f"⚠️ k={k} above {K_WARNING}; polynomial coefficients may lose precision")

    level = 1.0 - theta
    pieces = OdePieces(k=k, theta=theta, breakpoints=[0.0], zeta=[], zeta_poly=[], psi=[])
    prev_psi: List[float] = []
    for l in range(1, k + 1):
        start = pieces.breakpoints[l - 1]
        # ζ_{l,q} for q = l-2 down to 0, with ζ_{l,l-1} = 0
        zp = [0.0] * max(l - 1, 0)
        upper = 0.0
        for q in range(l - 2, -1, -1):
            zp[q] = (q + 1) * upper - prev_psi[q]
            upper = zp[q]
        tail = P.polyval(start, zp) * math.exp(-start) if zp else 0.0
        pieces.zeta.append(-theta * start - tail)
        pieces.zeta_poly.append(zp)

        if start >= k:
            pieces.breakpoints.append(float(k))
            pieces.psi.append([0.0] * l)
            prev_psi = pieces.psi[-1]
            continue

        if l == k or pieces.pre(l, float(k)) < level:
            nxt = float(k)
        else:
            _check_monotone(pieces, l, start, float(k))
            nxt = bisect(lambda t: pieces.pre(l, t) - level, start, float(k), xtol=1e-12)
        pieces.breakpoints.append(nxt)

        # ψ_{l,q} = ψ_{l-1,q-1}/q, ψ_{l,0} from continuity at t_{l+1}
        ps = [0.0] * l
        for q in range(1, l):
            ps[q] = prev_psi[q - 1] / q
        rest = P.polyval(nxt, ps) if l > 1 else 0.0
        ps[0] = -theta * math.exp(nxt) - rest
        pieces.psi.append(ps)
        prev_psi = ps

    logger.debug(f"📝 breakpoints for k={k}, theta={theta:.6f}: {pieces.breakpoints}")
    return pieces


def y_value(pieces: OdePieces, l: int, t: float) -> float:
    k = pieces.k
    if not 1 <= l <= k:
        raise DomainError(f"level {l} outside 1..{k}")
    if not -1e-12 <= t <= k + 1e-12:
        raise DomainError(f"time {t} outside [0, {k}]")
    start, nxt = pieces.breakpoints[l - 1], pieces.breakpoints[l]
    if t <= start:
        return 0.0
    if l == k or t <= nxt:
        return pieces.pre(l, t)
    return pieces.post(l, t)


def gamma_star(k: int, tol: float = THETA_TOL) -> float:
    """Tight k-unit ratio: the θ with ỹ_{k,θ}(k) = 1 - θ."""
    if k < 1 or tol <= 0:
        raise DomainError("k must be positive and tol must be positive")

    def gap(theta: float) -> float:
        return y_value(solve_pieces(k, theta), k, float(k)) - (1.0 - theta)

    root = bisect(gap, *THETA_BRACKET, xtol=tol)
    logger.info(f"🔍 gamma*_{k} = {root:.6f}")
    return root


def ode_rhs(theta: float, y: np.ndarray) -> np.ndarray:
    """Right-hand side of the served-count ODE; y[l-1] is level l."""
    y = np.asarray(y, dtype=float)
    k = y.size
    level = 1.0 - theta
    below = np.concatenate([[1.0], y[:-1]])
    out = np.where(y <= level, below - level, below - y)
    out = np.where(below <= level, 0.0, out)
    out[k - 1] = max(0.0, below[k - 1] - level)
    return out


def euler_trajectory(k: int, theta: float, N: int) -> OptimizeResult:
    """Forward Euler with step 1/N over [0, k]."""
    if N < 1:
        raise DomainError(f"N must be positive, got {N}")
    dt = 1.0 / N
    y = np.zeros(k)
    ts = [0.0]
    ys = [y]
    for n in range(N * k):
        y = y + dt * ode_rhs(theta, y)
        ts.append((n + 1) * dt)
        ys.append(y)
    return OptimizeResult(t=np.hstack(ts), y=np.vstack(ys).T)


def euler_gamma(k: int, N: int) -> float:
    """θ* of the uniform instance with N·k queries of probability 1/N."""
    if N < 1:
        raise DomainError(f"N must be positive, got {N}")
    return solve_theta_star(np.full(N * k, 1.0 / N), k)


def euler_error_bound(k: int, N: int) -> float:
    return (math.exp(2 * k) - 1.0) / N
