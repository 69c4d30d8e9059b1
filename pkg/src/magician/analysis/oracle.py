"""Benchmarks a policy is measured against, and the simulation harness.

dp_value is the optimal online policy, offline_value the prophet on one
realization and up_value the ex-ante relaxation bounding both.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import binom

from magician.analysis.lp import build_up_lp, simplex_solve
from magician.core.errors import DomainError, SolverError, StateCapError
from magician.core.instance import (
    MultiResourceInstance,
    MultiScenario,
    ScenarioDist,
    SingleResourceInstance,
)
from magician.core.run_config import setting, thread_count
from magician.models.reports import SimStats
from magician.policies.base_policy import OnlinePolicy
from magician.utils.utils import compensated_sum

logger = logging.getLogger(__name__)

DP_CAP = setting("caps.dp_states", 10000)
OFFLINE_CAP = setting("caps.offline_items", 24)
BUDGET_TOL = setting("tolerances.budget", 1e-9)


@dataclass
class DpTable:
    """V[t][c]: optimal value-to-go from period t with c units still free."""

    V: np.ndarray  # shape (T+1, U+1)
    serve: List[np.ndarray] = field(default_factory=list)  # per t: (scenarios, U+1) booleans

    @property
    def value(self) -> float:
        return float(self.V[0, -1])


def _check_states(U: int) -> None:
    if U + 1 > DP_CAP:
        raise StateCapError(f"{U + 1} capacity states exceed the cap of {DP_CAP}")


def dp_value(instance: SingleResourceInstance) -> DpTable:
    U = instance.grid.units
    _check_states(U)
    T = instance.T
    V = np.zeros((T + 1, U + 1))
    serve: List[np.ndarray] = [np.zeros((0, U + 1), dtype=bool)] * T
    for t in range(T - 1, -1, -1):
        nxt = V[t + 1]
        V[t] = nxt
        marks = []
        for p, r, d in instance.queries[t].scenarios():
            gain = np.full(U + 1, -np.inf)
            if d <= U:
                gain[d:] = r + nxt[: U + 1 - d] - nxt[d:]
            take = gain > 0
            V[t] = V[t] + p * np.where(take, gain, 0.0)
            marks.append(take)
        serve[t] = np.array(marks).reshape(len(marks), U + 1)
    return DpTable(V=V, serve=serve)


def kunit_dp_value(rewards: Sequence[float], probs: Sequence[float], k: int) -> float:
    """Optimal online value when every served query uses one of k units."""
    V = np.zeros(k + 1)
    for r, p in zip(reversed(list(rewards)), reversed(list(probs))):
        gain = np.zeros(k + 1)
        gain[1:] = np.maximum(0.0, r + V[:-1] - V[1:])
        V = V + p * gain
    return float(V[k])


def offline_value(realization: Sequence[Tuple[float, int]], capacity_units: int) -> float:
    """Best packing of realized (reward, size_units) items into one knapsack."""
    _check_states(capacity_units)
    best = np.zeros(capacity_units + 1)
    for r, d in realization:
        if r <= 0 or d > capacity_units:
            continue
        if d == 0:
            best = best + r
            continue
        nxt = best.copy()
        nxt[d:] = np.maximum(best[d:], best[: capacity_units + 1 - d] + r)
        best = nxt
    return float(best[-1])


def offline_value_multi(
    realization: Sequence[Tuple[Sequence[float], Sequence[int]]], capacity_units: int
) -> float:
    """Exact assignment of realized items to m knapsacks by memoized search."""
    items = [(list(r), list(d)) for r, d in realization]
    if len(items) > OFFLINE_CAP:
        raise StateCapError(f"{len(items)} items exceed the exact offline cap of {OFFLINE_CAP}")

    @lru_cache(maxsize=None)
    def best(i: int, free: Tuple[int, ...]) -> float:
        if i == len(items):
            return 0.0
        r, d = items[i]
        value = best(i + 1, free)
        for j, c in enumerate(free):
            if d[j] <= c and r[j] > 0:
                rest = free[:j] + (c - d[j],) + free[j + 1 :]
                value = max(value, r[j] + best(i + 1, rest))
        return value

    m = len(items[0][0]) if items else 0
    return best(0, (capacity_units,) * m)


def as_multi(instance: SingleResourceInstance) -> MultiResourceInstance:
    return MultiResourceInstance(
        m=1,
        grid=instance.grid,
        queries=[
            [MultiScenario(p=p, r=[r], d_units=[d]) for (r, d), p in zip(q.support, q.probs)]
            for q in instance.queries
        ],
    )


def up_value(instance: SingleResourceInstance | MultiResourceInstance) -> float:
    if isinstance(instance, SingleResourceInstance):
        if instance.budget() <= 1 + BUDGET_TOL:
            return float(sum(instance.expected_rewards()))
        instance = as_multi(instance)
    res = simplex_solve(build_up_lp(instance))
    if not res.optimal:
        raise SolverError(res.status)
    return res.objective


# -----------------------------------------------------
# Random routing
# -----------------------------------------------------


@dataclass
class RoutingPlan:
    instances: List[SingleResourceInstance]
    assign: List[np.ndarray]  # per query: (scenarios, m) routing probabilities
    up: float


def route(mi: MultiResourceInstance) -> RoutingPlan:
    """Split into one single-resource instance per resource using the optimal ex-ante fractions."""
    lp = build_up_lp(mi)
    res = simplex_solve(lp)
    if not res.optimal:
        raise SolverError(res.status)
    assign: List[np.ndarray] = []
    per_resource: List[List[ScenarioDist]] = [[] for _ in range(mi.m)]
    for t, q in enumerate(mi.queries):
        x = np.zeros((len(q), mi.m))
        for s, sc in enumerate(q):
            if sc.p <= 0:
                continue
            for j in range(mi.m):
                x[s, j] = min(1.0, max(0.0, res.value(lp, f"x[{t},{j},{s}]")))
        assign.append(x)
        for j in range(mi.m):
            per_resource[j].append(
                ScenarioDist(
                    support=[(sc.r[j], sc.d_units[j]) for sc in q],
                    probs=[sc.p * x[s, j] for s, sc in enumerate(q)],
                )
            )
    instances = [SingleResourceInstance(grid=mi.grid, queries=qs) for qs in per_resource]
    logger.info(f"🔀 Routed {len(mi.queries)} queries over {mi.m} resources, UP={res.objective:.6f}")
    return RoutingPlan(instances=instances, assign=assign, up=res.objective)


# -----------------------------------------------------
# Monte Carlo harness
# -----------------------------------------------------


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def _pick(cum: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)


def sample_realization(
    instance: SingleResourceInstance, rng: np.random.Generator
) -> List[Tuple[float, int]]:
    out = []
    for q in instance.queries:
        sc = q.scenarios()
        if not sc:
            out.append((0.0, 0))
            continue
        cum = np.cumsum([p for p, _, _ in sc])
        _, r, d = sc[_pick(cum, rng.random())]
        out.append((r, d))
    return out


def offline_expectation(
    instance: SingleResourceInstance, samples: int, seed: int
) -> Tuple[float, float]:
    """Monte Carlo mean and standard error of the prophet value."""
    vals = [
        offline_value(sample_realization(instance, _trial_rng(seed, i)), instance.grid.units)
        for i in range(samples)
    ]
    mean = compensated_sum(vals) / samples
    se = float(np.std(vals, ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return mean, se


def _run_trials(
    policy: OnlinePolicy, instance: SingleResourceInstance, trials: range, seed: int
) -> Tuple[List[float], np.ndarray, np.ndarray]:
    T = instance.T
    scen = [q.scenarios() for q in instance.queries]
    cums = [np.cumsum([p for p, _, _ in sc]) for sc in scen]
    rewards: List[float] = []
    active = np.zeros(T)
    served = np.zeros(T)
    for trial in trials:
        draws = _trial_rng(seed, trial).random((T, 2))
        policy.reset()
        total = 0.0
        for t in range(T):
            if not scen[t]:
                continue
            _, r, d = scen[t][_pick(cums[t], draws[t, 0])]
            if r == 0 and d == 0:
                continue
            active[t] += 1
            if policy.decide(t, r, d, draws[t, 1]):
                served[t] += 1
                total += r
        rewards.append(total)
    return rewards, active, served


def _summarize(
    name: str, trials: int, seed: int, rewards: List[float], active: np.ndarray, served: np.ndarray
) -> SimStats:
    mean = compensated_sum(rewards) / trials
    se = float(np.std(rewards, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(active > 0, served / np.maximum(active, 1), np.nan)
    seen = rates[~np.isnan(rates)]
    return SimStats(
        policy=name,
        trials=trials,
        seed=seed,
        mean=mean,
        std_error=se,
        rates=[float(v) if not np.isnan(v) else 0.0 for v in rates],
        min_conditional_rate=float(seen.min()) if seen.size else 0.0,
    )


def monte_carlo(
    policy: OnlinePolicy, instance: SingleResourceInstance, trials: int, seed: int
) -> SimStats:
    """Deterministic given seed: trial i always sees the stream keyed by (seed, i)."""
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    workers = min(thread_count(), trials)
    bounds = np.linspace(0, trials, workers + 1).astype(int)
    chunks = [range(bounds[i], bounds[i + 1]) for i in range(workers)]
    if workers == 1:
        parts = [_run_trials(policy, instance, chunks[0], seed)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(lambda ch: _run_trials(copy.deepcopy(policy), instance, ch, seed), chunks)
            )
    rewards = [r for part in parts for r in part[0]]
    active = sum(part[1] for part in parts)
    served = sum(part[2] for part in parts)
    stats = _summarize(policy.name, trials, seed, rewards, active, served)
    logger.info(f"🎲 {policy.name}: mean {stats.mean:.6f} ± {stats.std_error:.2e} over {trials} trials")
    return stats


def routed_best_fit(
    mi: MultiResourceInstance, gamma: float, trials: int, seed: int
) -> Tuple[SimStats, RoutingPlan]:
    """Route each query by the ex-ante fractions, then run Best-fit on every resource."""
    from magician.policies.knapsack import BestFitPolicy

    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    plan = route(mi)
    policies = [BestFitPolicy(inst, gamma) for inst in plan.instances]
    T = len(mi.queries)
    cums = [np.cumsum([sc.p for sc in q]) for q in mi.queries]
    rewards: List[float] = []
    active = np.zeros(T)
    served = np.zeros(T)
    for trial in range(trials):
        draws = _trial_rng(seed, trial).random((T, 3))
        for pol in policies:
            pol.reset()
        total = 0.0
        for t, q in enumerate(mi.queries):
            if not q or draws[t, 0] >= cums[t][-1]:
                continue
            s = _pick(cums[t], draws[t, 0])
            active[t] += 1
            routes = np.cumsum(plan.assign[t][s])
            if draws[t, 1] >= routes[-1]:
                continue
            j = _pick(routes, draws[t, 1])
            sc = q[s]
            if policies[j].decide(t, sc.r[j], sc.d_units[j], draws[t, 2]):
                served[t] += 1
                total += sc.r[j]
        rewards.append(total)
    stats = _summarize("routed-bestfit", trials, seed, rewards, active, served)
    return stats, plan


# -----------------------------------------------------
# Two-unit prophet instance: two unit rewards, a Poisson stream of r1, a rare r2/eps
# -----------------------------------------------------


def prophet2_values(r1: float, r2: float, lam: float) -> Dict[str, float]:
    e = np.exp(-lam)
    many = 1.0 - (1.0 + lam) * e
    prophet = r2 + 2.0 * e + (r1 + 1.0) * lam * e + 2.0 * r1 * many
    keep_one = 1.0 + e * r2 + (1.0 - e) * max(r1, r2)
    keep_two = e * r2 + lam * e * (r1 + r2) + many * (r1 + max(r1, r2))
    return {"prophet": prophet, "online_1": keep_one, "online_2": keep_two, "online_0": 2.0}


def prophet2_g(r1: float, r2: float, lam: float) -> float:
    v = prophet2_values(r1, r2, lam)
    return max(v["online_0"], v["online_1"], v["online_2"]) / v["prophet"]


def prophet2_bound(
    r_grid: Sequence[float] | None = None, lam_grid: Sequence[float] | None = None
) -> Tuple[float, float, float, float]:
    """Grid search of g over (r1, r2, lambda), refined by Nelder-Mead."""
    r_grid = np.linspace(1.0, 2.0, 21) if r_grid is None else np.asarray(r_grid)
    lam_grid = np.linspace(0.5, 2.5, 21) if lam_grid is None else np.asarray(lam_grid)
    best = (np.inf, 1.0, 1.0, 1.0)
    for r1 in r_grid:
        for r2 in r_grid:
            for lam in lam_grid:
                g = prophet2_g(r1, r2, lam)
                if g < best[0]:
                    best = (g, r1, r2, lam)

    def objective(z: np.ndarray) -> float:
        r1, r2, lam = z
        if r1 < 1.0 or r2 < 1.0 or lam <= 0.0:
            return np.inf
        return prophet2_g(r1, r2, lam)

    res = minimize(objective, x0=np.array(best[1:]), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000})
    if res.fun < best[0]:
        (r1, r2, lam), value = res.x, float(res.fun)
    else:
        value, r1, r2, lam = best
    logger.info(f"🔍 prophet bound {value:.5f} at r1={r1:.4f}, r2={r2:.4f}, lambda={lam:.4f}")
    return float(r1), float(r2), float(lam), value


def prophet2_discretized(r1: float, r2: float, lam: float, N: int, eps: float = 1e-7) -> float:
    """Online/prophet ratio with the Poisson stream replaced by N Bernoulli(lam/N) queries."""
    q = lam / N
    rewards = [1.0, 1.0] + [r1] * N + [r2 / eps]
    probs = [1.0, 1.0] + [q] * N + [eps]
    online = kunit_dp_value(rewards, probs, 2)

    n0, n1 = binom.pmf(0, N, q), binom.pmf(1, N, q)
    n2 = binom.sf(1, N, q)
    hi = max(r1, 1.0)
    top2 = n0 * 2.0 + n1 * (hi + 1.0) + n2 * 2.0 * hi
    top1 = n0 * 1.0 + (n1 + n2) * hi
    prophet = eps * (r2 / eps + top1) + (1.0 - eps) * top2
    return online / prophet
