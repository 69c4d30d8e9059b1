import numpy as np
import pytest

from magician.core.errors import DomainError, InvariantError
from magician.core.generators import generate, knapsack_tight, random_instance, uniform_kunit
from magician.core.instance import (
    MultiResourceInstance,
    MultiScenario,
    ScenarioDist,
    SizeGrid,
    bernoulli_instance,
    expected_size,
    load_instance,
    save_instance,
    validate,
)
from magician.core.pmf import UtilizationPmf, mass_in, move_mass, prune
from magician.core.run_config import ExperimentConfig, get_config, thread_count


def test_size_grid_rounds_up_but_tolerates_float_noise():
    # Arrange
    grid = SizeGrid(K=2, T=5)

    # Act / Assert
    assert grid.units == 10
    assert grid.ceil_units(0.3) == 3
    assert grid.ceil_units(0.31) == 4
    assert grid.to_size(5) == pytest.approx(0.5)


def test_scenario_dist_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        ScenarioDist(support=[(1.0, 1), (1.0, 2)], probs=[0.7, 0.4])
    with pytest.raises(ValueError):
        ScenarioDist(support=[(-1.0, 1)], probs=[0.5])


def test_scenarios_include_the_inactive_residual():
    # Arrange
    q = ScenarioDist.single(0.4, 1.0, 2)

    # Act
    scenarios = q.scenarios()

    # Assert
    assert scenarios[0] == (0.4, 1.0, 2)
    assert scenarios[1][0] == pytest.approx(0.6)
    assert scenarios[1][1:] == (0.0, 0)


def test_expected_size_is_a_fraction_of_capacity():
    grid = SizeGrid(K=1, T=4)
    q = ScenarioDist(support=[(1.0, 2), (1.0, 4)], probs=[0.5, 0.25])
    assert expected_size(q, grid) == pytest.approx(0.5 * 0.5 + 0.25 * 1.0)


def test_validate_reports_budget_overflow_without_raising():
    # Arrange
    instance = bernoulli_instance([1.0, 1.0], [0.6, 0.6])

    # Act
    report = validate(instance)

    # Assert
    assert not report.success
    assert report.budget == pytest.approx(1.2)
    assert any("budget" in v for v in report.violations)


def test_validate_accepts_budget_feasible_instance():
    report = validate(bernoulli_instance([0.5, 0.5], [1.0, 1.0]))
    assert report.success
    assert report.grid_ok


def test_multi_instance_json_round_trip(tmp_path):
    # Arrange
    mi = MultiResourceInstance(
        m=2,
        grid=SizeGrid(K=1, T=2),
        queries=[[MultiScenario(p=0.5, r=[1.0, 2.0], d_units=[1, 2])], []],
    )
    path = tmp_path / "multi.json"

    # Act
    save_instance(mi, path)
    loaded = load_instance(path)

    # Assert
    assert isinstance(loaded, MultiResourceInstance)
    assert loaded == mi


def test_load_instance_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_instance(tmp_path / "nope.json")


def test_load_instance_reports_bad_contents_as_domain_error(tmp_path):
    # Arrange
    path = tmp_path / "bad.json"
    path.write_text(
        '{"K": 1, "T": 2, "queries": [[{"p": 0.7, "r": 1.0, "d_units": 1}, '
        '{"p": 0.6, "r": 1.0, "d_units": 2}], []]}'
    )

    # Act / Assert
    with pytest.raises(DomainError, match="invalid instance"):
        load_instance(path)


def test_pmf_mass_in_and_move_mass():
    # Arrange
    pmf = UtilizationPmf.from_dict(4, {0: 0.5, 2: 0.3, 4: 0.2})

    # Act
    moved = move_mass(pmf, 2, 3, 0.1)

    # Assert
    assert mass_in(pmf, 0, 2) == pytest.approx(0.3)
    assert mass_in(pmf, -1, 4) == pytest.approx(1.0)
    assert moved.at(2) == pytest.approx(0.2)
    assert moved.at(3) == pytest.approx(0.1)
    assert moved.is_normalized()
    assert move_mass(pmf, 0, 1, 0.0) is pmf


def test_pmf_overdraw_raises_invariant_error():
    pmf = UtilizationPmf.point(4)
    with pytest.raises(InvariantError) as exc:
        move_mass(pmf, 2, 3, 0.1)
    assert exc.value.key == 2


def test_move_mass_conserves_total_over_many_random_moves():
    # Arrange
    rng = np.random.default_rng(5)
    pmf = UtilizationPmf.from_dict(20, {0: 0.25, 7: 0.25, 13: 0.25, 20: 0.25})

    # Act
    for _ in range(100_000):
        src, dst = (int(v) for v in rng.integers(0, 21, size=2))
        pmf = move_mass(pmf, src, dst, rng.random() * pmf.at(src))

    # Assert
    assert abs(pmf.total() - 1.0) <= 1e-12
    assert np.all(pmf.mass >= 0.0)


def test_pmf_rejects_empty_interval_and_negative_mass():
    with pytest.raises(DomainError):
        mass_in(UtilizationPmf.point(2), 2, 1)
    with pytest.raises(InvariantError):
        UtilizationPmf(np.array([1.1, -0.1]))


def test_prune_merges_into_nearest_heavy_atom():
    # Arrange
    pmf = UtilizationPmf.from_dict(4, {0: 0.5, 1: 1e-17, 4: 0.5})

    # Act
    pruned = prune(pmf, 1e-15)

    # Assert
    assert pruned.at(1) == 0.0
    assert pruned.total() == pytest.approx(1.0)


def test_get_config_reads_dotted_keys():
    assert get_config("bisection.theta_tol") == pytest.approx(1e-9)
    assert get_config("caps.offline_items") == 24
    assert get_config("knapsack.prune_mass") == pytest.approx(1e-15)
    with pytest.raises(KeyError):
        get_config("bisection.nothing_here")


def test_get_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        get_config("caps.dp_states", config_path=str(tmp_path / "missing.yml"))


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv("OCRS_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("OCRS_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count()


def test_experiment_config_needs_exactly_one_source():
    with pytest.raises(ValueError):
        ExperimentConfig(command="simulate", instance_path="a.json", generator="random")
    with pytest.raises(ValueError):
        ExperimentConfig(command="simulate")
    cfg = ExperimentConfig(command="simulate", generator="random", output_format="csv")
    assert cfg.output_format == "csv"


def test_random_generator_is_deterministic_and_budget_feasible():
    # Act
    a = random_instance(T=6, K=3, seed=11, support=3)
    b = random_instance(T=6, K=3, seed=11, support=3)

    # Assert
    assert a == b
    assert a.budget() <= 1.0 + 1e-12
    assert validate(a).success


def test_uniform_kunit_generator():
    instance = uniform_kunit(k=2, N=10)
    assert instance.T == 20
    assert all(q.probs == [pytest.approx(0.1)] for q in instance.queries)
    assert all(2 * q.support[0][1] == instance.grid.units for q in instance.queries)


def test_knapsack_tight_budget_is_one():
    instance = knapsack_tight(T=50, eps=0.01)
    assert instance.budget() == pytest.approx(1.0, abs=1e-12)
    assert instance.grid.K == 2


def test_unknown_generator():
    with pytest.raises(DomainError):
        generate("does-not-exist")
