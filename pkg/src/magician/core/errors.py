class MagicianError(Exception):
    """Base class for all errors raised by this package"""


class DomainError(MagicianError, ValueError):
    """Parameters outside the range an operation is defined on"""


class InvariantError(MagicianError):
    """A numeric invariant broke (mass overdraw, serve probability above 1)"""

    def __init__(self, message: str, key: int | None = None, deficit: float | None = None):
        super().__init__(message)
        self.key = key
        self.deficit = deficit


class InfeasibleThresholdError(MagicianError):
    """No threshold eta satisfies the two-sided mass condition"""

    def __init__(self, t: int, d_units: int, gamma: float, available: float):
        super().__init__(
            f"no threshold at t={t} for d_units={d_units}: "
            f"mass that fits is {available:.12g} < gamma={gamma:.12g}"
        )
        self.t = t
        self.d_units = d_units
        self.gamma = gamma
        self.available = available


class UnsupportedInstanceError(MagicianError):
    """Instance outside what a construction supports"""


class StateCapError(MagicianError):
    """A DP or LP state space exceeds its configured cap"""


class SolverError(MagicianError):
    """The LP solver stopped without an optimal basis"""

    def __init__(self, status: str):
        super().__init__(f"LP not solved to optimality: {status}")
        self.status = status
