"""Unit-density Best-fit: reward equals size, so a nonincreasing gamma
sequence can front-load service while the empty-path mass lasts.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize_scalar

from magician.analysis.oracle import monte_carlo
from magician.core.errors import DomainError
from magician.core.instance import ScenarioDist, SingleResourceInstance, SizeGrid, expected_size
from magician.core.run_config import setting, thread_count
from magician.models.reports import PolicyRun
from magician.policies.knapsack import BestFitPolicy, evolve, grid_for
from magician.utils.utils import write_csv_rows

logger = logging.getLogger(__name__)

DELTA = setting("unitdensity.delta", 1e-5)
SWEEP_DELTA = setting("unitdensity.sweep_delta", 1e-3)
GRID_STEP = setting("unitdensity.grid_step", 1e-3)
GAMMA0_TOL = setting("unitdensity.gamma0_tol", 1e-6)
OP_TOL = 1e-9
GAMMA0_DEFAULT = 0.3977


@dataclass(frozen=True)
class HProfile:
    """h(t) on the grid t = 0, delta, ..., 1 with its running integral."""

    gamma0: float
    step: float
    t: np.ndarray
    h: np.ndarray
    integral: np.ndarray

    @property
    def value(self) -> float:
        return float(self.integral[-1])

    def at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.h))

    def integral_at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.integral))


class GammaSequence(BaseModel):
    gammas: List[float]
    cumulative: List[float]  # k_0 = 0, ..., k_T
    gamma0: float = Field(gt=0.0, lt=1.0)

    @property
    def utilization(self) -> float:
        return self.cumulative_value(len(self.gammas))

    def cumulative_value(self, t: int) -> float:
        psi = np.diff(self.cumulative)[:t]
        return float(np.dot(self.gammas[:t], psi))


def _clauses(gamma0: float, mass: float) -> float:
    return min(1.0 - gamma0 - mass, 1.0 - 2.0 * mass - gamma0 * math.exp(-2.0 * mass / gamma0))


def h_profile(gamma0: float, delta: float = DELTA) -> HProfile:
    """Forward iteration of h with a trapezoidal running integral."""
    if not 0.0 < gamma0 < 1.0:
        raise DomainError(f"gamma0 must lie in (0, 1), got {gamma0}")
    if not 0.0 < delta <= 1e-2:
        raise DomainError(f"delta must lie in (0, 1e-2], got {delta}")
    n = int(round(1.0 / delta))
    step = 1.0 / n
    h = np.empty(n + 1)
    acc = np.empty(n + 1)
    prev, mass = gamma0, 0.0
    h[0], acc[0] = gamma0, 0.0
    for i in range(1, n + 1):
        # predictor on the left value, then one corrector on the trapezoid
        cur = max(0.0, min(prev, _clauses(gamma0, mass + step * prev)))
        cur = max(0.0, min(prev, _clauses(gamma0, mass + 0.5 * step * (prev + cur))))
        mass += 0.5 * step * (prev + cur)
        h[i], acc[i] = cur, mass
        prev = cur
    return HProfile(gamma0=gamma0, step=step, t=np.linspace(0.0, 1.0, n + 1), h=h, integral=acc)


def gamma_sequence(psi: Sequence[float], gamma0: float, delta: float = DELTA) -> GammaSequence:
    """Average h over consecutive windows [k_{t-1}, k_t] of length psi_t."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0):
        raise DomainError("expected sizes must be nonnegative")
    if psi.sum() > 1.0 + 1e-9:
        raise DomainError(f"expected sizes sum to {psi.sum():.12g} > 1")
    profile = h_profile(gamma0, delta)
    ks = np.minimum(np.concatenate([[0.0], np.cumsum(psi)]), 1.0)
    areas = np.diff(np.interp(ks, profile.t, profile.integral))
    point = np.interp(ks[:-1], profile.t, profile.h)
    with np.errstate(divide="ignore", invalid="ignore"):
        gammas = np.where(psi > 0, areas / np.where(psi > 0, psi, 1.0), point)
    gammas = np.clip(gammas, 0.0, 1.0)
    # interpolation noise must not break the monotone chain
    gammas = np.minimum.accumulate(gammas)
    return GammaSequence(gammas=gammas.tolist(), cumulative=ks.tolist(), gamma0=gamma0)


def check_OP_feasible(gammas: Sequence[float], psi: Sequence[float], tol: float = OP_TOL) -> bool:
    g = np.asarray(gammas, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if g.size != psi.size:
        raise DomainError(f"{g.size} gammas for {psi.size} queries")
    if g.size == 0:
        return True
    if g[0] > 1.0 + tol or g[-1] < -tol or np.any(np.diff(g) > tol):
        return False
    g1 = g[0]
    served = np.cumsum(g * psi)[:-1]  # S_t for t = 1..T-1
    first = 1.0 - g1 - served
    second = 1.0 - 2.0 * served - (g1 * np.exp(-2.0 * served / g1) if g1 > 0 else 0.0)
    nxt = g[1:]
    return bool(np.all(nxt <= first + tol) and np.all(nxt <= second + tol))


def optimize_gamma0(
    delta: float = DELTA, tol: float = GAMMA0_TOL, grid_check: bool = True
) -> Tuple[float, float]:
    """gamma0 maximizing the integral of h over [0, 1]."""

    def loss(g: float) -> float:
        if not 0.0 < g < 1.0:
            return 0.0
        return -h_profile(g, delta).value

    res = minimize_scalar(loss, bracket=(0.2, 0.4, 0.6), method="golden", tol=tol)
    best_g, best_v = float(res.x), -float(res.fun)

    if grid_check:
        candidates = np.arange(GRID_STEP, 1.0, GRID_STEP)
        coarse = min(SWEEP_DELTA, 1e-2)
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            values = list(pool.map(lambda g: h_profile(float(g), coarse).value, candidates))
        grid_g = float(candidates[int(np.argmax(values))])
        grid_v = h_profile(grid_g, delta).value
        if grid_v - best_v > 1e-4:
            logger.warning(
                f"⚠️ golden-section ({best_g:.5f}, {best_v:.5f}) and grid ({grid_g:.5f}, {grid_v:.5f}) "
                "disagree; keeping the grid optimum"
            )
            best_g, best_v = grid_g, grid_v

    logger.info(f"🔍 gamma0* = {best_g:.4f}, integral = {best_v:.4f}")
    return best_g, best_v


def empty_mass_bound(gammas: Sequence[float], psi: Sequence[float], t: int) -> float:
    """Lower bound on P(X_t = 0) after the first t queries."""
    if t <= 0 or not len(gammas) or gammas[0] <= 0:
        return 1.0
    g1 = float(gammas[0])
    served = float(np.dot(gammas[:t], psi[:t]))
    return min(1.0 - g1 - served, 1.0 - 2.0 * served - g1 * math.exp(-2.0 * served / g1))


def psi_vector(instance: SingleResourceInstance) -> List[float]:
    return [expected_size(q, instance.grid) for q in instance.queries]


class UnitDensityPolicy(BestFitPolicy):
    """Best-fit thresholds with a nonincreasing per-period gamma."""

    name = "ud"

    def _validate(self) -> None:
        if not self.instance.is_unit_density():
            raise DomainError("unit-density policy needs reward == size on every support point")
        if np.any(np.diff(self.gammas) > 1e-12):
            raise DomainError("gammas must be nonincreasing")
        super()._validate()


def _resolve_gammas(
    instance: SingleResourceInstance, gammas: Optional[Sequence[float]], gamma0: Optional[float]
) -> List[float]:
    if gammas is not None:
        return list(gammas)
    return gamma_sequence(psi_vector(instance), gamma0 or GAMMA0_DEFAULT, SWEEP_DELTA).gammas


def run_ud_policy(
    instance: SingleResourceInstance,
    gammas: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    gamma0: Optional[float] = None,
    trials: int = 0,
    certify: bool = False,
    record_trace: bool = False,
) -> PolicyRun:
    """Best-fit pmf mechanics with gamma_t in place of a constant gamma."""
    if not instance.is_unit_density():
        raise DomainError("unit-density policy needs reward == size on every support point")
    seq = _resolve_gammas(instance, gammas, gamma0)
    if any(not 0.0 <= g <= 1.0 for g in seq) or np.any(np.diff(seq) > 1e-12):
        raise DomainError("gammas must be a nonincreasing sequence in [0, 1]")
    run, _ = evolve(instance, seq, certify=certify, record_trace=record_trace)
    if run.feasible and trials > 0:
        stats = monte_carlo(UnitDensityPolicy(instance, seq), instance, trials, seed or 0)
        run = run.model_copy(update={"reward_estimate": stats.mean})
    logger.info(f"{'✅' if run.feasible else '❌'} unit-density run: utilization {run.utilization:.6f}")
    return run


# -----------------------------------------------------
# Bounding instances and exports
# -----------------------------------------------------


def example1_instance(eps: float = 1e-9) -> SingleResourceInstance:
    """Four unit-density queries where a uniform gamma is capped near 9/22."""
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    grid = SizeGrid(K=3, T=4)
    rows = [(2.0 / 3.0, 6), (2.0 / 3.0, 6), (1.0 - eps, 4), (eps / 3.0, 12)]
    return SingleResourceInstance(
        grid=grid, queries=[ScenarioDist.single(p, grid.to_size(d), d) for p, d in rows]
    )


def example1_gammas() -> List[float]:
    """Feasible but not monotone; beats every constant gamma on example1_instance."""
    return [1.0, 1.0 / 3.0, 5.0 / 9.0, 0.0]


def ud_upper_instance(T: int) -> SingleResourceInstance:
    """T identical queries of size 1/2 + 1/T, each active w.p. 2/T; only one ever fits."""
    if T < 3:
        raise DomainError(f"T must be at least 3, got {T}")
    size = 0.5 + 1.0 / T
    grid = grid_for(T, [size])
    d = grid.ceil_units(size)
    return SingleResourceInstance(
        grid=grid, queries=[ScenarioDist.single(2.0 / T, grid.to_size(d), d) for _ in range(T)]
    )


def ud_upper_ratio(T: int) -> float:
    return (0.5 + 1.0 / T) * (1.0 - (1.0 - 2.0 / T) ** T)


def worst_case_ratio(profile: HProfile, k_T: float) -> float:
    if not 0.0 < k_T <= 1.0:
        raise DomainError(f"k_T must lie in (0, 1], got {k_T}")
    return profile.integral_at(k_T) / k_T


def profile_csv(profile: HProfile, path: Optional[str] = None) -> List[Dict[str, float]]:
    rows = [
        {"t": float(t), "h": float(h), "integral": float(a)}
        for t, h, a in zip(profile.t, profile.h, profile.integral)
    ]
    if path:
        write_csv_rows(path, rows, ["t", "h", "integral"])
    return rows
