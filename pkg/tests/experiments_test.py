import math

import pytest

from magician.core import experiments
from magician.core.experiments import (
    EXISTING_BOUNDS,
    classical_bound,
    correlation_gap,
    gamma_table,
    reproduce,
)


def test_gamma_table_rows():
    # Act
    rows = gamma_table(3)

    # Assert
    assert [r["k"] for r in rows] == [1, 2, 3]
    assert rows[0]["existing"] == EXISTING_BOUNDS[0]
    for r in rows:
        assert r["existing"] <= r["gamma_star"] + 1e-6
        assert r["gamma_star"] <= r["upper"] + 1e-6
        assert r["euler"] is None


def test_reference_bounds():
    assert classical_bound(1) == pytest.approx(0.5)
    assert correlation_gap(1) == 0.5
    assert correlation_gap(2) == pytest.approx(1.0 - 2.0 * math.exp(-2.0))


def test_reproduce_unknown_target_never_raises():
    report = reproduce("bogus")
    assert not report.success
    assert report.checks == []
    assert "table1" in report.error


def test_reproduce_table1():
    report = reproduce("table1")
    assert report.success, report.violations
    assert len(report.checks) == 8 + 7


def test_reproduce_lemma3_small_count():
    report = reproduce("lemma3", seed=3, count=5)
    assert report.success, report.violations


def test_reproduce_discretization_small_count():
    report = reproduce("discretization", seed=1, count=4)
    assert report.success, report.violations
    assert {c.name for c in report.checks} >= {"UP(H')/UP(H) at K=5", "UP(H')/UP(H) at K=20"}


def test_reproduce_euler_at_full_scale():
    # Act
    report = reproduce("euler")

    # Assert
    assert report.success, report.violations
    assert len(report.checks) == 3 * 3
    assert "Euler error k=3, N=2000" in {c.name for c in report.checks}


def test_reproduce_large_small_separation(monkeypatch):
    # Arrange
    monkeypatch.setattr(experiments, "SIM_TRIALS", 5000)

    # Act
    report = reproduce("large-small", seed=4)

    # Assert
    assert report.success, report.violations
    segregated = [c for c in report.checks if c.name.startswith("segregated ratio")]
    assert len(segregated) == 2
    assert all(c.measured <= c.expected for c in segregated)


def test_routing_uses_configured_trials_per_instance(monkeypatch):
    # Arrange
    seen = []
    real = experiments.routed_best_fit

    def recording(mi, gamma, trials, seed):
        seen.append(trials)
        return real(mi, gamma, trials, seed)

    monkeypatch.setattr(experiments, "SIM_TRIALS", 3000)
    monkeypatch.setattr(experiments, "routed_best_fit", recording)

    # Act
    report = reproduce("routing", seed=5, count=3)

    # Assert
    assert seen == [3000, 3000, 3000]
    assert report.success, report.violations


def test_simulation_trials_default_comes_from_config():
    assert experiments.SIM_TRIALS == 100000
