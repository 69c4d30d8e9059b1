import csv

import numpy as np
import pytest

from magician.analysis.oracle import dp_value, up_value
from magician.core.errors import DomainError
from magician.core.generators import random_instance
from magician.policies.knapsack import GAMMA_BESTFIT, evolve, max_feasible_gamma
from magician.policies.unitdensity import (
    GAMMA0_DEFAULT,
    UnitDensityPolicy,
    _clauses,
    check_OP_feasible,
    empty_mass_bound,
    example1_gammas,
    example1_instance,
    gamma_sequence,
    h_profile,
    optimize_gamma0,
    profile_csv,
    psi_vector,
    run_ud_policy,
    ud_upper_instance,
    ud_upper_ratio,
    worst_case_ratio,
)


@pytest.fixture(scope="module")
def profile():
    return h_profile(GAMMA0_DEFAULT, 1e-3)


def test_h_profile_shape(profile):
    # Assert
    assert profile.h[0] == GAMMA0_DEFAULT
    assert profile.t[-1] == pytest.approx(1.0)
    assert np.all(np.diff(profile.h) <= 0.0)
    assert np.all(profile.h >= 0.0)
    assert profile.value == pytest.approx(0.3557, abs=1e-3)


def test_h_profile_respects_both_clauses(profile):
    # clauses fall as served mass grows, so the left endpoint bounds each step
    for i in range(1, profile.h.size):
        bound = max(0.0, _clauses(profile.gamma0, float(profile.integral[i - 1])))
        assert profile.h[i] <= bound + 1e-12


def test_h_profile_parameter_checks():
    with pytest.raises(DomainError):
        h_profile(0.0, 1e-3)
    with pytest.raises(DomainError):
        h_profile(0.4, 0.1)


def test_gamma_sequence_single_window_is_the_integral(profile):
    # Act
    seq = gamma_sequence([1.0], GAMMA0_DEFAULT, 1e-3)

    # Assert
    assert seq.cumulative == pytest.approx([0.0, 1.0])
    assert seq.gammas[0] == pytest.approx(profile.value, abs=1e-12)
    assert seq.utilization == pytest.approx(profile.value, abs=1e-12)


def test_gamma_sequence_zero_size_query_takes_point_value():
    seq = gamma_sequence([0.0, 0.5], GAMMA0_DEFAULT, 1e-3)
    assert seq.gammas[0] == pytest.approx(GAMMA0_DEFAULT)
    assert seq.gammas[1] <= seq.gammas[0]


def test_gamma_sequence_rejects_overfull_budget():
    with pytest.raises(DomainError):
        gamma_sequence([0.6, 0.6], GAMMA0_DEFAULT, 1e-3)


@pytest.mark.parametrize("psi", [[0.1] * 10, [0.05, 0.3, 0.15, 0.2, 0.3], [0.25, 0.25, 0.2]])
def test_averaged_profile_is_op_feasible(psi):
    # Act
    seq = gamma_sequence(psi, GAMMA0_DEFAULT, 1e-4)

    # Assert
    assert check_OP_feasible(seq.gammas, psi, tol=1e-7)
    assert np.all(np.diff(seq.gammas) <= 0.0)


def test_constant_bestfit_gamma_is_op_feasible():
    psi = [0.2] * 5
    assert check_OP_feasible([GAMMA_BESTFIT] * 5, psi)


def test_op_rejects_overservice_and_increase():
    assert not check_OP_feasible([0.9, 0.9], [0.5, 0.5])
    assert not check_OP_feasible([0.2, 0.3], [0.5, 0.5])
    with pytest.raises(DomainError):
        check_OP_feasible([0.2], [0.5, 0.5])


def test_optimize_gamma0_finds_the_known_optimum():
    # Act
    g0, value = optimize_gamma0(1e-3, grid_check=False)

    # Assert
    assert g0 == pytest.approx(0.3977, abs=5e-3)
    assert value == pytest.approx(0.3557, abs=1e-3)


def test_example1_non_monotone_sequence_beats_uniform_cap():
    # Arrange
    eps = 1e-9
    instance = example1_instance(eps)

    # Act
    run, _ = evolve(instance, example1_gammas(), certify=True)
    cap = max_feasible_gamma(instance)

    # Assert
    assert run.feasible
    assert run.utilization == pytest.approx(17.0 / 27.0, abs=1e-6)
    assert cap == pytest.approx(9.0 / 22.0, abs=1e-6)
    assert run.utilization > cap


def test_example1_gammas_are_rejected_by_unit_density_runner():
    with pytest.raises(DomainError):
        run_ud_policy(example1_instance(), example1_gammas())


def test_ud_upper_instance_ratio_matches_closed_form():
    # Arrange
    T = 100
    instance = ud_upper_instance(T)

    # Act
    up = up_value(instance)
    ratio = dp_value(instance).value / up

    # Assert
    assert instance.budget() > 1.0
    assert up == pytest.approx(1.0, abs=1e-9)
    assert ratio == pytest.approx(ud_upper_ratio(T), abs=1e-9)


def test_zero_gammas_serve_nothing():
    instance = random_instance(T=4, K=2, seed=2, unit_density=True)
    run = run_ud_policy(instance, [0.0] * instance.T, certify=True)
    assert run.feasible
    assert run.utilization == 0.0
    assert run.reward_estimate == 0.0


def test_default_sequence_comes_from_the_profile():
    instance = random_instance(T=5, K=2, seed=6, unit_density=True)
    run = run_ud_policy(instance)
    assert run.gammas[0] <= GAMMA0_DEFAULT + 1e-12
    assert np.all(np.diff(run.gammas) <= 0.0)


def test_empty_mass_stays_above_its_bound():
    # Arrange
    instance = random_instance(T=6, K=2, seed=9, unit_density=True)
    psi = psi_vector(instance)
    gammas = [GAMMA_BESTFIT] * instance.T

    # Act
    run = run_ud_policy(instance, gammas, certify=True)

    # Assert
    for t, empty in enumerate(run.empty_mass, start=1):
        assert empty >= empty_mass_bound(gammas, psi, t) - 1e-9


def test_unit_density_policy_rejects_other_rewards():
    instance = random_instance(T=4, K=2, seed=2)
    with pytest.raises(DomainError):
        UnitDensityPolicy(instance, [0.3] * instance.T)


def test_worst_case_ratio(profile):
    assert worst_case_ratio(profile, 1.0) == pytest.approx(profile.value)
    assert worst_case_ratio(profile, 0.5) >= profile.value
    with pytest.raises(DomainError):
        worst_case_ratio(profile, 0.0)


def test_profile_csv_writes_every_grid_point(profile, tmp_path):
    # Act
    path = tmp_path / "h.csv"
    rows = profile_csv(profile, str(path))

    # Assert
    with open(path) as f:
        written = list(csv.DictReader(f))
    assert len(rows) == len(written) == profile.h.size
    assert float(written[0]["h"]) == pytest.approx(GAMMA0_DEFAULT)
