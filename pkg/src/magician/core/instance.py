import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from magician.core.errors import DomainError
from magician.core.run_config import setting
from magician.models.reports import ValidationReport

logger = logging.getLogger(__name__)

PROB_TOL = setting("tolerances.prob_sum", 1e-12)
BUDGET_TOL = setting("tolerances.budget", 1e-9)


class SizeGrid(BaseModel):
    """Sizes are integer multiples of 1/(K*T); capacity is K*T units."""

    model_config = ConfigDict(frozen=True)

    K: int = Field(gt=0)
    T: int = Field(ge=0)

    @property
    def units(self) -> int:
        return self.K * self.T

    def to_size(self, units: int) -> float:
        if self.units == 0:
            return 0.0
        return units / self.units

    def ceil_units(self, size: float) -> int:
        """Smallest grid multiple not below size (tolerant to float noise)."""
        scaled = size * self.units
        nearest = round(scaled)
        if abs(scaled - nearest) <= 1e-9 * max(1.0, abs(scaled)):
            return int(nearest)
        return int(-(-scaled // 1))


class ScenarioDist(BaseModel):
    """Finite joint distribution of (reward, size_units) for one query.

    Mass missing from probs is the inactive outcome (reward 0, size 0).
    Constructing one directly raises pydantic's ValidationError (a ValueError);
    load_instance turns that into DomainError.
    """

    model_config = ConfigDict(frozen=True)

    support: List[Tuple[float, int]] = Field(default_factory=list)
    probs: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "ScenarioDist":
        if len(self.support) != len(self.probs):
            raise DomainError("support and probs must have equal length")
        for (r, d), p in zip(self.support, self.probs):
            if p < 0:
                raise DomainError(f"negative probability {p}")
            if r < 0:
                raise DomainError(f"negative reward {r}")
            if d < 0:
                raise DomainError(f"negative size {d}")
        if sum(self.probs) > 1 + PROB_TOL:
            raise DomainError(f"probabilities sum to {sum(self.probs)} > 1")
        return self

    @classmethod
    def single(cls, p: float, r: float, d_units: int) -> "ScenarioDist":
        return cls(support=[(r, d_units)], probs=[p])

    @property
    def inactive_prob(self) -> float:
        return max(0.0, 1.0 - sum(self.probs))

    def scenarios(self) -> List[Tuple[float, float, int]]:
        """(p, r, d_units) triples, inactive residual included so probabilities sum to 1."""
        out = [(p, r, d) for (r, d), p in zip(self.support, self.probs) if p > 0]
        residual = self.inactive_prob
        if residual > 0:
            out.append((residual, 0.0, 0))
        return out

    def size_pmf(self) -> Dict[int, float]:
        """p_t(d) for every positive size d (units)."""
        pmf: Dict[int, float] = {}
        for (r, d), p in zip(self.support, self.probs):
            if d > 0 and p > 0:
                pmf[d] = pmf.get(d, 0.0) + p
        return dict(sorted(pmf.items()))

    def expected_reward(self) -> float:
        return sum(p * r for (r, _), p in zip(self.support, self.probs))

    def expected_units(self) -> float:
        return sum(p * d for (_, d), p in zip(self.support, self.probs))


def expected_size(q: ScenarioDist, grid: SizeGrid) -> float:
    """psi_t: expected size of a query as a fraction of capacity."""
    return grid.to_size(1) * q.expected_units() if grid.units else 0.0


class SingleResourceInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid: SizeGrid
    queries: List[ScenarioDist] = Field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.queries)

    def budget(self) -> float:
        return sum(expected_size(q, self.grid) for q in self.queries)

    def expected_rewards(self) -> List[float]:
        return [q.expected_reward() for q in self.queries]

    def is_unit_density(self, tol: float = 1e-12) -> bool:
        return all(
            abs(r - self.grid.to_size(d)) <= tol
            for q in self.queries
            for (r, d), p in zip(q.support, q.probs)
            if p > 0
        )


class MultiScenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float = Field(ge=0)
    r: List[float]
    d_units: List[int]


class MultiResourceInstance(BaseModel):
    """Queries with per-resource reward and size vectors; every capacity is 1."""

    model_config = ConfigDict(frozen=True)

    m: int = Field(gt=0)
    grid: SizeGrid
    queries: List[List[MultiScenario]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "MultiResourceInstance":
        for t, q in enumerate(self.queries):
            if sum(s.p for s in q) > 1 + PROB_TOL:
                raise DomainError(f"query {t} probabilities exceed 1")
            for s in q:
                if len(s.r) != self.m or len(s.d_units) != self.m:
                    raise DomainError(f"query {t} vectors must have length m={self.m}")
        return self


def validate(instance: SingleResourceInstance) -> ValidationReport:
    """Budget, probability and grid checks; never raises."""
    issues: List[str] = []
    prob_sums = [sum(q.probs) for q in instance.queries]
    for t, s in enumerate(prob_sums):
        if s > 1 + PROB_TOL:
            issues.append(f"query {t + 1}: probabilities sum to {s:.12g}")
    grid_ok = True
    if instance.T and instance.grid.T != instance.T:
        issues.append(f"grid horizon {instance.grid.T} differs from query count {instance.T}")
        grid_ok = False
    for t, q in enumerate(instance.queries):
        for _, d in q.support:
            if d > instance.grid.units:
                issues.append(f"query {t + 1}: size {d} units exceeds capacity {instance.grid.units}")
                grid_ok = False
    budget = instance.budget()
    if budget > 1 + BUDGET_TOL:
        issues.append(f"budget {budget:.12g} > 1")

    ok = not issues
    return ValidationReport(
        success=ok,
        message="✅ instance valid" if ok else f"❌ {len(issues)} issue(s)",
        budget=budget,
        prob_sums=prob_sums,
        grid_ok=grid_ok,
        violations=issues,
    )


# -----------------------------------------------------
# JSON instance format
# -----------------------------------------------------


def instance_to_dict(instance: SingleResourceInstance) -> dict:
    return {
        "K": instance.grid.K,
        "T": instance.grid.T,
        "queries": [
            [{"p": p, "r": r, "d_units": d} for (r, d), p in zip(q.support, q.probs)]
            for q in instance.queries
        ],
    }


def instance_from_dict(raw: dict) -> SingleResourceInstance:
    if "m" in raw:
        raise DomainError("multi-resource document; use multi_instance_from_dict")
    grid = SizeGrid(K=raw["K"], T=raw["T"])
    queries = [
        ScenarioDist(
            support=[(float(s["r"]), int(s["d_units"])) for s in q],
            probs=[float(s["p"]) for s in q],
        )
        for q in raw["queries"]
    ]
    return SingleResourceInstance(grid=grid, queries=queries)


def multi_instance_to_dict(mi: MultiResourceInstance) -> dict:
    return {
        "m": mi.m,
        "K": mi.grid.K,
        "T": mi.grid.T,
        "queries": [[s.model_dump() for s in q] for q in mi.queries],
    }


def multi_instance_from_dict(raw: dict) -> MultiResourceInstance:
    return MultiResourceInstance(
        m=raw["m"],
        grid=SizeGrid(K=raw["K"], T=raw["T"]),
        queries=[[MultiScenario(**s) for s in q] for q in raw["queries"]],
    )


def load_instance(path: str | Path) -> SingleResourceInstance | MultiResourceInstance:
    """Read an instance document; malformed contents surface as DomainError."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Instance file not found: {path}")
    with open(path) as f:
        raw = json.load(f)
    try:
        if "m" in raw:
            return multi_instance_from_dict(raw)
        return instance_from_dict(raw)
    except ValidationError as e:
        raise DomainError(f"invalid instance {path}: {e.errors()[0]['msg']}") from e


def save_instance(
    instance: SingleResourceInstance | MultiResourceInstance, path: str | Path
) -> Path:
    path = Path(path)
    raw = (
        multi_instance_to_dict(instance)
        if isinstance(instance, MultiResourceInstance)
        else instance_to_dict(instance)
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(raw, f, indent=2)
    tmp.replace(path)
    logger.info(f"📂 Wrote instance with {len(raw['queries'])} queries to {path}")
    return path


def bernoulli_instance(
    probs: List[float], sizes: List[float], rewards: Optional[List[float]] = None, K: int = 1
) -> SingleResourceInstance:
    """One scenario per query; sizes are rounded up to the grid."""
    if len(probs) != len(sizes):
        raise DomainError("probs and sizes must have equal length")
    rewards = rewards if rewards is not None else [1.0] * len(probs)
    grid = SizeGrid(K=K, T=len(probs))
    queries = [
        ScenarioDist.single(p, r, grid.ceil_units(d)) for p, r, d in zip(probs, rewards, sizes)
    ]
    return SingleResourceInstance(grid=grid, queries=queries)
