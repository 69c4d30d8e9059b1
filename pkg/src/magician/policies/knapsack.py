"""Best-fit Magician for the online stochastic knapsack.

The policy tracks the distribution of consumed capacity X (in grid units)
across sample paths. A query of size d is served on a gamma-measure of the
paths where it fits, taking the most utilized ones first.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from magician.analysis.oracle import dp_value, monte_carlo, up_value
from magician.core.errors import DomainError, InfeasibleThresholdError
from magician.core.instance import ScenarioDist, SingleResourceInstance, SizeGrid
from magician.core.pmf import UtilizationPmf, move_mass, prune
from magician.core.run_config import setting
from magician.models.reports import InvariantReport, PolicyRun
from magician.policies.base_policy import OnlinePolicy

logger = logging.getLogger(__name__)

GAMMA_BESTFIT = 1.0 / (3.0 + math.exp(-2.0))
CLAMP_TOL = setting("tolerances.mass_clamp", 1e-12)
INVARIANT_TOL = setting("tolerances.invariant", 1e-9)
PRUNE_MASS = setting("knapsack.prune_mass", 1e-15)


class ThresholdDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta_units: int
    tie_serve_prob: float = Field(ge=0.0, le=1.0)
    above_mass: float = 0.0  # P(eta < X <= U - d)


@dataclass(frozen=True)
class BestFitState:
    gamma: float
    grid: SizeGrid
    pmf: UtilizationPmf
    t: int = 0

    @classmethod
    def initial(cls, grid: SizeGrid, gamma: float) -> "BestFitState":
        return cls(gamma=gamma, grid=grid, pmf=UtilizationPmf.point(grid.units))


def threshold(pmf: UtilizationPmf, d_units: int, gamma: float, t: int = 0) -> ThresholdDecision:
    """Largest eta with P(eta < X <= U-d) <= gamma <= P(eta <= X <= U-d)."""
    U = pmf.units
    if gamma <= 0:
        return ThresholdDecision(eta_units=max(U - d_units, 0), tie_serve_prob=0.0)
    if d_units > U:
        raise InfeasibleThresholdError(t, d_units, gamma, 0.0)
    seg = pmf.mass[: U - d_units + 1][::-1]
    cums = np.cumsum(seg)
    available = float(cums[-1])
    if available < gamma - CLAMP_TOL:
        raise InfeasibleThresholdError(t, d_units, gamma, available)
    positive = np.flatnonzero(seg > 0)
    if positive.size == 0:
        return ThresholdDecision(eta_units=U - d_units, tie_serve_prob=0.0)
    hit = np.flatnonzero(cums >= gamma)
    # gamma within rounding of all the fitting mass: settle on the lowest atom
    i = int(hit[0]) if hit.size else int(positive[-1])
    above = float(cums[i] - seg[i])
    tie = (gamma - above) / float(seg[i])
    return ThresholdDecision(
        eta_units=U - d_units - i, tie_serve_prob=min(1.0, max(0.0, tie)), above_mass=above
    )


def _advance(
    state: BestFitState, q: ScenarioDist
) -> Tuple[BestFitState, float, int, Dict[int, ThresholdDecision]]:
    """One period: new state, served mass, atoms scanned and the thresholds used."""
    U = state.grid.units
    old = state.pmf.mass
    arr = old.copy()
    ties: List[Tuple[int, int, float]] = []
    decisions: Dict[int, ThresholdDecision] = {}
    served = 0.0
    scanned = 0
    t = state.t + 1
    for d, pd in q.size_pmf().items():
        th = threshold(state.pmf, d, state.gamma, t)
        decisions[d] = th
        scanned += U - d + 1
        if state.gamma <= 0:
            continue
        lo, hi = th.eta_units + 1, U - d
        if lo <= hi:
            block = pd * old[lo : hi + 1]
            arr[lo : hi + 1] -= block
            arr[lo + d : hi + d + 1] += block
        eta = th.eta_units
        ties.append((eta, eta + d, pd * th.tie_serve_prob * old[eta]))
        served += pd * (th.above_mass + th.tie_serve_prob * old[eta])
    pmf = UtilizationPmf(arr)
    for src, dst, amount in ties:
        pmf = move_mass(pmf, src, dst, amount)
    # size-0 realizations fit everywhere and move nothing
    if any(d == 0 and p > 0 for (_, d), p in zip(q.support, q.probs)):
        decisions[0] = threshold(state.pmf, 0, state.gamma, t)
        served += state.gamma * sum(p for (_, d), p in zip(q.support, q.probs) if d == 0)
    return replace(state, pmf=pmf, t=t), served, scanned, decisions


def step(state: BestFitState, q: ScenarioDist) -> BestFitState:
    return _advance(state, q)[0]


def decide(
    state: BestFitState, realized: Tuple[float, int], consumed_units: int, random_draw: float
) -> bool:
    """Serve above eta where the query fits; at eta serve with the tie probability."""
    _, d = realized
    if state.gamma <= 0 or consumed_units + d > state.grid.units:
        return False
    th = threshold(state.pmf, d, state.gamma, state.t + 1)
    if consumed_units > th.eta_units:
        return True
    return consumed_units == th.eta_units and random_draw < th.tie_serve_prob


def invariant_check(pmf: UtilizationPmf, gamma: float, tol: float = INVARIANT_TOL) -> InvariantReport:
    """(1/gamma) mu(0,b] <= exp(-(1/gamma) mu(b,1-b]) for every grid b in (0, 1/2]."""
    U = pmf.units
    half = U // 2
    if gamma <= 0 or half < 1:
        return InvariantReport(success=True, message="✅ nothing to check", max_violation=0.0)
    cdf = np.cumsum(pmf.mass)  # cdf[x] = P(X <= x)
    b = np.arange(1, half + 1)
    low = cdf[b] - cdf[0]
    mid = cdf[U - b] - cdf[b]
    slack = low / gamma - np.exp(-mid / gamma)
    i = int(np.argmax(slack))
    worst = float(slack[i])
    ok = worst <= tol
    return InvariantReport(
        success=ok,
        message="✅ invariant holds" if ok else f"❌ invariant fails at b={int(b[i])} units",
        max_violation=worst,
        worst_b_units=int(b[i]),
        violations=[] if ok else [f"slack {worst:.3e} at b={int(b[i])}"],
    )


def evolve(
    instance: SingleResourceInstance,
    gammas: Sequence[float],
    certify: bool = False,
    record_trace: bool = False,
    check_invariant: bool = True,
    strict: bool = False,
) -> Tuple[PolicyRun, List[Dict[int, ThresholdDecision]]]:
    """Push the utilization pmf through every query with per-period gammas."""
    if len(gammas) != instance.T:
        raise DomainError(f"need {instance.T} gammas, got {len(gammas)}")
    state = BestFitState.initial(instance.grid, gammas[0] if gammas else 0.0)
    inv_gamma = gammas[0] if gammas else 0.0
    empty: List[float] = []
    served: List[float] = []
    trace: List[Dict[int, float]] = []
    thresholds: List[Dict[int, ThresholdDecision]] = []
    steps = 0
    worst = float("-inf")
    reward = 0.0
    for t, (q, g) in enumerate(zip(instance.queries, gammas)):
        state = replace(state, gamma=g)
        try:
            state, mass, scanned, decisions = _advance(state, q)
        except InfeasibleThresholdError as e:
            if strict:
                raise
            logger.warning(f"⚠️ infeasible at query {t + 1}: {e}")
            run = PolicyRun(
                feasible=False,
                gammas=list(gammas),
                reward_estimate=reward,
                empty_mass=empty,
                served_mass=served,
                invariant_max_slack=worst,
                steps=steps,
                failed_at=t + 1,
                error=str(e),
                trace=trace,
            )
            return run, thresholds
        if not certify:
            state = replace(state, pmf=prune(state.pmf, PRUNE_MASS))
        steps += scanned
        thresholds.append(decisions)
        empty.append(state.pmf.at(0))
        served.append(mass)
        reward += g * q.expected_reward()
        if check_invariant:
            worst = max(worst, invariant_check(state.pmf, inv_gamma).max_violation)
        if record_trace:
            trace.append(state.pmf.as_dict())

    U = instance.grid.units
    run = PolicyRun(
        feasible=True,
        gammas=list(gammas),
        reward_estimate=reward,
        utilization=state.pmf.mean_units() / U if U else 0.0,
        empty_mass=empty,
        served_mass=served,
        invariant_max_slack=worst,
        steps=steps,
        trace=trace,
    )
    return run, thresholds


class BestFitPolicy(OnlinePolicy):
    """Executes precomputed thresholds on one sample path."""

    name = "bestfit"

    def __init__(self, instance: SingleResourceInstance, gamma: float | Sequence[float]):
        self.instance = instance
        self.gammas = [gamma] * instance.T if np.isscalar(gamma) else list(gamma)
        super().__init__()

    def _validate(self) -> None:
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise DomainError("every gamma must lie in [0, 1]")
        _, self.thresholds = evolve(
            self.instance, self.gammas, certify=True, check_invariant=False, strict=True
        )

    def reset(self) -> None:
        self.consumed = 0

    def decide(self, t: int, reward: float, size_units: int, draw: float) -> bool:
        if self.gammas[t] <= 0 or self.consumed + size_units > self.instance.grid.units:
            return False
        th = self.thresholds[t].get(size_units)
        if th is None:
            return False
        serve = self.consumed > th.eta_units or (
            self.consumed == th.eta_units and draw < th.tie_serve_prob
        )
        if serve:
            self.consumed += size_units
        return serve


def run_policy(
    instance: SingleResourceInstance,
    gamma: float | str = "auto",
    seed: Optional[int] = None,
    trials: int = 0,
    certify: bool = False,
    record_trace: bool = False,
) -> PolicyRun:
    """Evolve the Best-fit pmf; feasibility is part of the result, not an exception."""
    g = GAMMA_BESTFIT if gamma == "auto" else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {g}")
    run, _ = evolve(instance, [g] * instance.T, certify=certify, record_trace=record_trace)
    if run.feasible and trials > 0:
        stats = monte_carlo(BestFitPolicy(instance, g), instance, trials, seed or 0)
        run = run.model_copy(update={"reward_estimate": stats.mean})
    logger.info(
        f"{'✅' if run.feasible else '❌'} best-fit gamma={g:.6f}: "
        f"feasible={run.feasible}, steps={run.steps}"
    )
    return run


def exact_reward(instance: SingleResourceInstance, gamma: float) -> float:
    return gamma * sum(instance.expected_rewards())


def empty_mass_bound_uniform(gamma: float, budget: float) -> float:
    """Lower bound on P(X=0) after a prefix of expected size `budget` at constant gamma."""
    if gamma <= 0:
        return 1.0
    return min(1.0 - gamma - gamma * budget, 1.0 - 2.0 * gamma * budget - gamma * math.exp(-2.0 * budget))


def max_feasible_gamma(instance: SingleResourceInstance, tol: float = 1e-9) -> float:
    """Largest constant gamma whose thresholds exist at every period, by bisection."""

    def feasible(g: float) -> bool:
        return evolve(instance, [g] * instance.T, certify=True, check_invariant=False)[0].feasible

    if feasible(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -----------------------------------------------------
# Grids and bounding instances
# -----------------------------------------------------


def discretize_instance(instance: SingleResourceInstance, K: int) -> SingleResourceInstance:
    """Round every size up to a multiple of 1/(K*T); rewards are unchanged."""
    if K < 1:
        raise DomainError(f"K must be at least 1, got {K}")
    grid = SizeGrid(K=K, T=instance.T)
    queries = [
        ScenarioDist(
            support=[(r, grid.ceil_units(instance.grid.to_size(d))) for r, d in q.support],
            probs=list(q.probs),
        )
        for q in instance.queries
    ]
    return SingleResourceInstance(grid=grid, queries=queries)


def grid_for(T: int, sizes: Sequence[float], K: Optional[int] = None, max_K: int = 2000) -> SizeGrid:
    """Smallest refinement on which every size is an exact grid multiple."""
    if K is not None:
        return SizeGrid(K=K, T=T)
    for k in range(1, max_K + 1):
        if all(abs(s * k * T - round(s * k * T)) <= 1e-9 for s in sizes):
            return SizeGrid(K=k, T=T)
    logger.warning(f"⚠️ no exact grid up to K={max_K}; sizes will be rounded up")
    return SizeGrid(K=max_K, T=T)


def _instance(rows: List[Tuple[float, float, float]], grid: SizeGrid) -> SingleResourceInstance:
    """rows of (reward, probability, size)."""
    return SingleResourceInstance(
        grid=grid,
        queries=[ScenarioDist.single(p, r, grid.ceil_units(d)) for r, p, d in rows],
    )


def tightness_instance(T: int, eps: float, K: Optional[int] = None) -> SingleResourceInstance:
    """One tiny sure query, T-2 queries just above half, one rare full-size query."""
    if T < 3 or not 0.0 < eps < 0.25:
        raise DomainError(f"need T >= 3 and 0 < eps < 1/4, got T={T}, eps={eps}")
    mid_p = (1.0 - 2.0 * eps) / ((T - 2) * (0.5 + eps))
    rows = [(1.0, 1.0, eps)] + [(1.0, mid_p, 0.5 + eps)] * (T - 2) + [(1.0, eps, 1.0)]
    return _instance(rows, grid_for(T, [eps, 0.5 + eps, 1.0], K))


def prop2_instance(r: float, eps: float, K: Optional[int] = None) -> SingleResourceInstance:
    """Four queries on which serving only large or only small sizes earns about a quarter of UP."""
    if r <= 0 or not 0.0 < eps < 0.25:
        raise DomainError(f"need r > 0 and 0 < eps < 1/4, got r={r}, eps={eps}")
    q = (1.0 - 2.0 * eps) / (1.0 + 2.0 * eps)
    rows = [(r, 1.0, eps), (r, q, 0.5 + eps), (r, q, 0.5 + eps), (r / eps, eps, 1.0)]
    return _instance(rows, grid_for(4, [eps, 0.5 + eps, 1.0], K))


def _restrict(instance: SingleResourceInstance, large: bool) -> SingleResourceInstance:
    U = instance.grid.units
    queries = []
    for q in instance.queries:
        keep = [(sc, p) for sc, p in zip(q.support, q.probs) if (2 * sc[1] > U) == large]
        queries.append(ScenarioDist(support=[s for s, _ in keep], probs=[p for _, p in keep]))
    return SingleResourceInstance(grid=instance.grid, queries=queries)


def large_small_baseline(instance: SingleResourceInstance) -> float:
    """Best online value serving only sizes above 1/2, or only the rest, over UP."""
    v_large = dp_value(_restrict(instance, large=True)).value
    v_small = dp_value(_restrict(instance, large=False)).value
    up = up_value(instance)
    logger.debug(f"📝 segregated values: large={v_large:.6f}, small={v_small:.6f}, UP={up:.6f}")
    return max(v_large, v_small) / up if up > 0 else 0.0
