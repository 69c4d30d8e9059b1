from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class Report(BaseModel):
    """Standard response format for every report-style operation"""

    success: bool
    message: str
    data: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    violations: List[str] = Field(default_factory=list)


class ValidationReport(Report):
    budget: float = 0.0
    prob_sums: List[float] = Field(default_factory=list)
    grid_ok: bool = True


class CertificateReport(Report):
    theta_star: float
    primal_feasible: bool
    dual_feasible: bool
    slackness_max: float
    objective_gap: float


class InvariantReport(Report):
    max_violation: float = 0.0
    worst_b_units: Optional[int] = None


class PolicyRun(BaseModel):
    """Outcome of evolving a policy's utilization pmf through an instance"""

    feasible: bool
    gammas: List[float]
    reward_estimate: float
    utilization: float = 0.0
    empty_mass: List[float] = Field(default_factory=list)
    served_mass: List[float] = Field(default_factory=list)
    invariant_max_slack: float = float("-inf")
    steps: int = 0
    failed_at: Optional[int] = None
    error: Optional[str] = None
    trace: List[Dict[int, float]] = Field(default_factory=list)


class SimStats(BaseModel):
    policy: str
    trials: int
    seed: int
    mean: float
    std_error: float
    rates: List[float]
    min_conditional_rate: float

    def summary_row(self, gamma: float | None = None) -> Dict[str, Any]:
        return {
            "policy": self.policy,
            "gamma": gamma,
            "mean": self.mean,
            "se": self.std_error,
            "min_conditional_rate": self.min_conditional_rate,
        }


class Check(BaseModel):
    name: str
    measured: float
    expected: float
    tol: float
    passed: bool


class ReproduceReport(Report):
    target: str
    checks: List[Check] = Field(default_factory=list)
