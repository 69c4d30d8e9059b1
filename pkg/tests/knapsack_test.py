import pytest

from magician.core.errors import DomainError, InfeasibleThresholdError
from magician.core.generators import random_instance
from magician.core.instance import ScenarioDist, SingleResourceInstance, SizeGrid, bernoulli_instance
from magician.core.pmf import UtilizationPmf
from magician.policies.knapsack import (
    GAMMA_BESTFIT,
    BestFitPolicy,
    BestFitState,
    decide,
    discretize_instance,
    empty_mass_bound_uniform,
    evolve,
    exact_reward,
    invariant_check,
    large_small_baseline,
    prop2_instance,
    run_policy,
    step,
    threshold,
    tightness_instance,
)
from magician.policies.unitdensity import run_ud_policy


@pytest.fixture
def two_atoms():
    return UtilizationPmf.from_dict(4, {0: 0.5, 2: 0.5})


def _one_query_instance():
    # U = 4 units, a single sure query of half the capacity
    return SingleResourceInstance(grid=SizeGrid(K=4, T=1), queries=[ScenarioDist.single(1.0, 1.0, 2)])


def test_threshold_splits_the_lowest_atom(two_atoms):
    # Act
    th = threshold(two_atoms, 2, 0.6)

    # Assert
    assert th.eta_units == 0
    assert th.tie_serve_prob == pytest.approx(0.2)
    assert th.above_mass == pytest.approx(0.5)


def test_threshold_takes_the_largest_eta_on_exact_mass(two_atoms):
    th = threshold(two_atoms, 2, 0.5)
    assert th.eta_units == 2
    assert th.tie_serve_prob == pytest.approx(1.0)


def test_threshold_without_enough_fitting_mass(two_atoms):
    with pytest.raises(InfeasibleThresholdError) as exc:
        threshold(two_atoms, 3, 0.6, t=5)
    assert exc.value.t == 5
    assert exc.value.available == pytest.approx(0.5)


def test_threshold_zero_gamma_serves_nothing(two_atoms):
    th = threshold(two_atoms, 3, 0.0)
    assert th.eta_units == 1
    assert th.tie_serve_prob == 0.0


def test_step_from_empty_knapsack():
    # Arrange
    state = BestFitState.initial(SizeGrid(K=4, T=1), 0.5)

    # Act
    nxt = step(state, ScenarioDist.single(1.0, 1.0, 2))

    # Assert
    assert nxt.t == 1
    assert nxt.pmf.as_dict() == {0: pytest.approx(0.5), 2: pytest.approx(0.5)}


def test_evolve_reports_served_and_empty_mass():
    # Act
    run, thresholds = evolve(_one_query_instance(), [0.5], certify=True, record_trace=True)

    # Assert
    assert run.feasible
    assert run.served_mass == [pytest.approx(0.5)]
    assert run.empty_mass == [pytest.approx(0.5)]
    assert run.trace[0] == {0: pytest.approx(0.5), 2: pytest.approx(0.5)}
    assert thresholds[0][2].eta_units == 0


def test_decide_serves_most_utilized_paths():
    # Arrange
    state = step(BestFitState.initial(SizeGrid(K=4, T=1), 0.5), ScenarioDist.single(1.0, 1.0, 2))

    # Act / Assert
    assert decide(state, (1.0, 2), 2, 0.99) is True
    assert decide(state, (1.0, 2), 0, 0.0) is False
    assert decide(state, (1.0, 2), 3, 0.0) is False  # does not fit


def test_invariant_holds_on_empty_knapsack():
    report = invariant_check(UtilizationPmf.point(4), 0.3)
    assert report.success
    assert report.max_violation == pytest.approx(-1.0)


def test_invariant_flags_small_utilization_mass():
    # Act
    report = invariant_check(UtilizationPmf.from_dict(4, {1: 1.0}), 0.3)

    # Assert
    assert not report.success
    assert report.worst_b_units == 1
    assert report.violations


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_best_fit_on_random_instances(seed):
    # Arrange
    instance = random_instance(T=8, K=3, seed=seed, support=3)

    # Act
    run = run_policy(instance, certify=True)

    # Assert
    assert run.feasible
    assert run.invariant_max_slack <= 1e-9
    assert min(run.empty_mass) >= GAMMA_BESTFIT - 1e-9
    assert run.utilization == pytest.approx(GAMMA_BESTFIT * instance.budget(), abs=1e-9)
    assert run.reward_estimate == pytest.approx(exact_reward(instance, GAMMA_BESTFIT))
    U = instance.grid.units
    assert run.steps <= sum(len(q.support) for q in instance.queries) * (U + 1)


def test_served_mass_is_gamma_of_activity():
    instance = random_instance(T=6, K=2, seed=8, support=2)
    run = run_policy(instance, 0.3, certify=True)
    for q, served in zip(instance.queries, run.served_mass):
        assert served == pytest.approx(0.3 * sum(q.probs), abs=1e-9)


def test_run_policy_reports_infeasibility_instead_of_raising():
    # Arrange
    instance = bernoulli_instance([1.0, 1.0], [1.0, 1.0])

    # Act
    run = run_policy(instance, 0.9)

    # Assert
    assert not run.feasible
    assert run.failed_at == 2
    assert "no threshold" in run.error


def test_policy_construction_is_strict():
    with pytest.raises(InfeasibleThresholdError):
        BestFitPolicy(bernoulli_instance([1.0, 1.0], [1.0, 1.0]), 0.9)
    with pytest.raises(DomainError):
        run_policy(bernoulli_instance([0.5], [0.5]), 1.5)


def test_unit_density_with_constant_gamma_is_best_fit():
    # Arrange
    instance = random_instance(T=6, K=2, seed=5, unit_density=True)

    # Act
    plain = run_policy(instance, GAMMA_BESTFIT, certify=True)
    ud = run_ud_policy(instance, [GAMMA_BESTFIT] * instance.T, certify=True)

    # Assert
    assert ud.utilization == pytest.approx(plain.utilization, abs=1e-12)
    assert ud.empty_mass == pytest.approx(plain.empty_mass, abs=1e-12)


def test_empty_mass_bound_at_full_budget_is_gamma():
    assert empty_mass_bound_uniform(GAMMA_BESTFIT, 1.0) == pytest.approx(GAMMA_BESTFIT, abs=1e-12)
    assert empty_mass_bound_uniform(0.0, 1.0) == 1.0


@pytest.mark.parametrize("T, eps, K", [(50, 0.02, 1), (50, 0.01, 2), (10, 0.05, 2)])
def test_tightness_instance_grid_and_budget(T, eps, K):
    instance = tightness_instance(T, eps)
    assert instance.grid.K == K
    assert instance.budget() == pytest.approx(1.0, abs=1e-12)


def test_tightness_instance_parameter_range():
    with pytest.raises(DomainError):
        tightness_instance(2, 0.05)
    with pytest.raises(DomainError):
        tightness_instance(10, 0.3)


def test_large_small_baseline_is_about_a_quarter():
    # Arrange
    instance = prop2_instance(1.0, 0.01)

    # Act
    ratio = large_small_baseline(instance)

    # Assert
    assert instance.grid.units == 100
    assert ratio <= 0.27


def test_best_fit_beats_large_small_baseline():
    instance = prop2_instance(1.0, 0.01)
    run = run_policy(instance, certify=True)
    assert run.feasible
    assert run.reward_estimate / sum(instance.expected_rewards()) > large_small_baseline(instance)


def test_discretize_rounds_sizes_up():
    # Arrange
    instance = SingleResourceInstance(
        grid=SizeGrid(K=4, T=2),
        queries=[ScenarioDist.single(0.5, 1.0, 3), ScenarioDist.single(0.5, 2.0, 4)],
    )

    # Act
    coarse = discretize_instance(instance, 2)

    # Assert
    assert coarse.grid.units == 4
    assert [q.support[0] for q in coarse.queries] == [(1.0, 2), (2.0, 2)]
    with pytest.raises(DomainError):
        discretize_instance(instance, 0)
