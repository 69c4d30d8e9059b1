import math

import numpy as np
import pytest
from scipy.optimize import OptimizeResult

from magician.analysis.ode import (
    euler_error_bound,
    euler_gamma,
    euler_trajectory,
    gamma_star,
    ode_rhs,
    solve_pieces,
    y_value,
)
from magician.core.errors import DomainError
from magician.policies.kunit import build_candidate


def test_single_unit_level_is_linear():
    # Arrange
    pieces = solve_pieces(1, 0.4)

    # Act / Assert
    assert pieces.breakpoints == [0.0, 1.0]
    assert y_value(pieces, 1, 0.5) == pytest.approx(0.2)
    assert y_value(pieces, 1, 1.0) == pytest.approx(0.4)


def test_gamma_star_one_unit_is_half():
    assert gamma_star(1) == pytest.approx(0.5, abs=1e-8)


def test_gamma_star_two_units_matches_table():
    assert gamma_star(2) == pytest.approx(0.6148, abs=5e-4)


def test_gamma_star_increases_and_beats_classical_bound():
    # Act
    values = [gamma_star(k) for k in (1, 2, 3)]

    # Assert
    assert values[0] < values[1] < values[2]
    for k, g in zip((2, 3), values[1:]):
        assert g > 1.0 - 1.0 / math.sqrt(k + 3) + 1e-3


def test_levels_are_monotone_in_time():
    pieces = solve_pieces(3, 0.67)
    grid = np.linspace(0.0, 3.0, 121)
    for l in (1, 2, 3):
        vals = np.array([y_value(pieces, l, t) for t in grid])
        assert np.all(np.diff(vals) >= -1e-9)


def test_pieces_parameter_checks():
    with pytest.raises(DomainError):
        solve_pieces(2, 1.0)
    with pytest.raises(DomainError):
        solve_pieces(0, 0.5)
    with pytest.raises(DomainError):
        y_value(solve_pieces(2, 0.6), 3, 1.0)


def test_ode_rhs_top_level_never_saturates():
    # Arrange
    y = np.array([0.9, 0.8])

    # Act
    out = ode_rhs(0.6, y)

    # Assert
    assert out[0] == pytest.approx(0.1)
    assert out[1] == pytest.approx(0.9 - 0.4)


def test_euler_trajectory_matches_uniform_candidate():
    # Arrange
    k, theta, N = 2, 0.61, 40

    # Act
    traj = euler_trajectory(k, theta, N)
    cand = build_candidate(np.full(N * k, 1.0 / N), k, theta)

    # Assert
    assert isinstance(traj, OptimizeResult)
    assert traj.t[-1] == pytest.approx(k)
    assert traj.y[:, -1] == pytest.approx(cand.x.sum(axis=1), abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_euler_gamma_within_error_bound(k):
    # Arrange
    exact = gamma_star(k)

    # Act
    errors = {N: abs(euler_gamma(k, N) - exact) for N in (500, 2000)}

    # Assert
    for N, err in errors.items():
        assert err <= euler_error_bound(k, N)
    assert errors[2000] <= errors[500] + 1e-12
