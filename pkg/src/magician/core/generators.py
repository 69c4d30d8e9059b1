"""Named instance generators behind `magician generate`."""

import logging
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from magician.core.errors import DomainError
from magician.core.instance import (
    MultiResourceInstance,
    MultiScenario,
    ScenarioDist,
    SingleResourceInstance,
    SizeGrid,
)
from magician.policies.knapsack import grid_for, prop2_instance, tightness_instance
from magician.policies.unitdensity import ud_upper_instance

logger = logging.getLogger(__name__)


def knapsack_tight(T: int = 50, eps: float = 0.01, K: Optional[int] = None) -> SingleResourceInstance:
    return tightness_instance(int(T), float(eps), None if K is None else int(K))


def large_small(r: float = 1.0, eps: float = 0.01, K: Optional[int] = None) -> SingleResourceInstance:
    return prop2_instance(float(r), float(eps), None if K is None else int(K))


def ud_upper(T: int = 1000) -> SingleResourceInstance:
    return ud_upper_instance(int(T))


def _kunit_instance(rewards: List[float], probs: List[float], k: int) -> SingleResourceInstance:
    """Every query takes one of k equal units."""
    grid = grid_for(len(probs), [1.0 / k])
    d = grid.ceil_units(1.0 / k)
    return SingleResourceInstance(
        grid=grid, queries=[ScenarioDist.single(p, r, d) for r, p in zip(rewards, probs)]
    )


def prophet2(
    r1: float = 1.4119, r2: float = 1.4119, lam: float = 1.2319, N: int = 200, eps: float = 1e-4
) -> SingleResourceInstance:
    """Two sure unit rewards, N Bernoulli(lam/N) copies of r1, then r2/eps w.p. eps; k=2."""
    N = int(N)
    if N < 1 or lam <= 0 or not 0.0 < eps < 1.0:
        raise DomainError("prophet2 needs N >= 1, lam > 0 and 0 < eps < 1")
    rewards = [1.0, 1.0] + [float(r1)] * N + [float(r2) / eps]
    probs = [1.0, 1.0] + [float(lam) / N] * N + [float(eps)]
    return _kunit_instance(rewards, probs, 2)


def uniform_kunit(k: int = 2, N: int = 1000) -> SingleResourceInstance:
    """N*k queries active w.p. 1/N, each consuming one of k units."""
    k, N = int(k), int(N)
    if k < 1 or N < 1:
        raise DomainError("uniform-kunit needs k >= 1 and N >= 1")
    return _kunit_instance([1.0] * (N * k), [1.0 / N] * (N * k), k)


def random_instance(
    T: int = 5,
    K: int = 2,
    seed: int = 7,
    support: int = 2,
    unit_density: bool = False,
    budget: float = 1.0,
) -> SingleResourceInstance:
    """Seeded random instance, rescaled so the expected-size budget is at most `budget`."""
    T, K, support = int(T), int(K), int(support)
    if T < 1 or K < 1 or support < 1 or not 0.0 < budget <= 1.0:
        raise DomainError("random needs T, K, support >= 1 and 0 < budget <= 1")
    rng = np.random.default_rng(int(seed))
    grid = SizeGrid(K=K, T=T)
    U = grid.units
    rows = []
    for _ in range(T):
        n = int(rng.integers(1, support + 1))
        sizes = rng.integers(1, U + 1, size=n)
        probs = rng.dirichlet(np.ones(n)) * rng.uniform(0.2, 1.0)
        rewards = sizes / U if unit_density else rng.uniform(0.1, 1.0, size=n)
        rows.append((sizes, probs, rewards))

    mean_units = sum(float(np.dot(p, d)) for d, p, _ in rows)
    scale = min(1.0, budget * U / mean_units) if mean_units > 0 else 1.0
    queries = [
        ScenarioDist(
            support=[(float(r), int(d)) for r, d in zip(rewards, sizes)],
            probs=[float(p) * scale for p in probs],
        )
        for sizes, probs, rewards in rows
    ]
    return SingleResourceInstance(grid=grid, queries=queries)


def random_multi_instance(
    m: int = 2, T: int = 4, K: int = 2, seed: int = 7, support: int = 2
) -> MultiResourceInstance:
    """Seeded multi-resource instance; the routing LP takes care of the budgets."""
    m, T, K, support = int(m), int(T), int(K), int(support)
    if m < 1 or T < 1 or K < 1 or support < 1:
        raise DomainError("random-multi needs m, T, K, support >= 1")
    rng = np.random.default_rng(int(seed))
    grid = SizeGrid(K=K, T=T)
    queries = []
    for _ in range(T):
        n = int(rng.integers(1, support + 1))
        probs = rng.dirichlet(np.ones(n)) * rng.uniform(0.3, 1.0)
        queries.append(
            [
                MultiScenario(
                    p=float(p),
                    r=rng.uniform(0.1, 1.0, size=m).tolist(),
                    d_units=rng.integers(1, grid.units + 1, size=m).tolist(),
                )
                for p in probs
            ]
        )
    return MultiResourceInstance(m=m, grid=grid, queries=queries)


GENERATORS: Dict[str, Callable[..., Any]] = {
    "knapsack-tight": knapsack_tight,
    "large-small": large_small,
    "ud-upper": ud_upper,
    "prophet2": prophet2,
    "uniform-kunit": uniform_kunit,
    "random": random_instance,
    "random-multi": random_multi_instance,
}


def generate(name: str, params: Optional[Dict[str, Any]] = None):
    if name not in GENERATORS:
        raise DomainError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    instance = GENERATORS[name](**(params or {}))
    logger.info(f"📝 generated {name} with {len(instance.queries)} queries")
    return instance
