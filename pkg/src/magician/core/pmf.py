import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from magician.core.errors import DomainError, InvariantError
from magician.core.run_config import setting

logger = logging.getLogger(__name__)

CLAMP_TOL = setting("tolerances.mass_clamp", 1e-12)
TOTAL_TOL = setting("tolerances.mass_total", 1e-9)


@dataclass(frozen=True)
class UtilizationPmf:
    """Distribution of consumed capacity over grid units 0..units.

    Stored densely: mass[u] is the probability that exactly u units are used.
    """

    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.mass, dtype=float).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("pmf needs a one-dimensional, non-empty mass vector")
        if np.any(arr < -CLAMP_TOL):
            key = int(np.argmin(arr))
            raise InvariantError(f"negative mass {arr[key]:.3e} at unit {key}", key, -arr[key])
        arr[arr < 0] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "mass", arr)

    @classmethod
    def point(cls, units: int, at: int = 0) -> "UtilizationPmf":
        arr = np.zeros(units + 1)
        arr[at] = 1.0
        return cls(arr)

    @classmethod
    def from_dict(cls, units: int, masses: Mapping[int, float]) -> "UtilizationPmf":
        arr = np.zeros(units + 1)
        for k, v in masses.items():
            if not 0 <= k <= units:
                raise DomainError(f"key {k} outside 0..{units}")
            arr[k] += v
        return cls(arr)

    @property
    def units(self) -> int:
        return self.mass.size - 1

    def at(self, u: int) -> float:
        return float(self.mass[u])

    def total(self) -> float:
        return float(self.mass.sum())

    def mean_units(self) -> float:
        return float(np.dot(np.arange(self.mass.size), self.mass))

    def as_dict(self) -> Dict[int, float]:
        return {int(k): float(self.mass[k]) for k in np.flatnonzero(self.mass)}

    def is_normalized(self, tol: float = TOTAL_TOL) -> bool:
        return abs(self.total() - 1.0) <= tol

    def with_mass(self, arr: np.ndarray) -> "UtilizationPmf":
        return UtilizationPmf(arr)


def mass_in(pmf: UtilizationPmf, a_units: int, b_units: int) -> float:
    """P(a < X <= b) in grid units."""
    if a_units > b_units:
        raise DomainError(f"empty interval ({a_units}, {b_units}]")
    lo = max(a_units + 1, 0)
    hi = min(b_units, pmf.units)
    if hi < lo:
        return 0.0
    return float(pmf.mass[lo : hi + 1].sum())


def move_mass(
    pmf: UtilizationPmf, from_units: int, to_units: int, amount: float
) -> UtilizationPmf:
    """Shift `amount` of probability from one utilization level to another."""
    if not 0 <= to_units <= pmf.units:
        raise DomainError(f"target {to_units} outside 0..{pmf.units}")
    if amount == 0:
        return pmf
    available = pmf.at(from_units)
    if amount > available + CLAMP_TOL:
        raise InvariantError(
            f"overdraw at unit {from_units}: need {amount:.12g}, have {available:.12g}",
            key=from_units,
            deficit=amount - available,
        )
    amount = min(amount, available)
    arr = pmf.mass.copy()
    arr[from_units] -= amount
    arr[to_units] += amount
    return UtilizationPmf(arr)


def prune(pmf: UtilizationPmf, threshold: float) -> UtilizationPmf:
    """Merge atoms lighter than threshold into their nearest heavier neighbour."""
    arr = pmf.mass.copy()
    tiny = np.flatnonzero((arr > 0) & (arr < threshold))
    heavy = np.flatnonzero(arr >= threshold)
    if tiny.size == 0 or heavy.size == 0:
        return pmf
    for k in tiny:
        nearest = heavy[np.argmin(np.abs(heavy - k))]
        arr[nearest] += arr[k]
        arr[k] = 0.0
    logger.debug(f"🧹 Pruned {tiny.size} atoms below {threshold:.1e}")
    return UtilizationPmf(arr)
