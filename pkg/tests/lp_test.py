import pytest

from magician.analysis.lp import (
    LinearProgram,
    build_dual_pD,
    build_dual_pk,
    build_primal_pD,
    build_primal_pk,
    build_up_lp,
    lemma3_check,
    lp_optimum,
    parse_lp_text,
    reachable_states,
    simplex_solve,
    to_lp_text,
)
from magician.analysis.oracle import as_multi
from magician.core.errors import DomainError, SolverError
from magician.core.instance import bernoulli_instance
from magician.policies.kunit import solve_theta_star


def _footnote_instance():
    # two half-probability full-size queries, rewards scaled so UP = 1
    return bernoulli_instance([0.5, 0.5], [1.0, 1.0], [2.0 / 3.0, 4.0 / 3.0])


def test_simplex_max_with_slack_rows():
    # Arrange
    lp = parse_lp_text("max\n3 2\n1 1 <= 4\n1 3 <= 6\nend\n")

    # Act
    res = simplex_solve(lp)

    # Assert
    assert res.optimal
    assert res.objective == pytest.approx(12.0)
    assert res.x == pytest.approx([4.0, 0.0])


def test_simplex_min_needs_phase_one():
    lp = parse_lp_text("min\n1 1\n1 2 >= 2\n3 1 >= 3\nend")
    res = simplex_solve(lp)
    assert res.optimal
    assert res.objective == pytest.approx(1.4)
    assert res.residual <= 1e-9


def test_simplex_equality_row():
    assert lp_optimum(parse_lp_text("max\n1 2\n1 1 = 1\nend")) == pytest.approx(2.0)


def test_simplex_detects_infeasible_and_unbounded():
    infeasible = parse_lp_text("max\n1\n1 <= 1\n1 >= 2\nend")
    unbounded = parse_lp_text("max\n1 1\n1 -1 <= 1\nend")
    assert simplex_solve(infeasible).status == "infeasible"
    assert simplex_solve(unbounded).status == "unbounded"
    with pytest.raises(SolverError):
        lp_optimum(infeasible)


def test_lp_text_export_parses_back():
    # Arrange
    lp = build_dual_pk([0.5, 0.5], 1)

    # Act
    again = parse_lp_text(to_lp_text(lp))

    # Assert
    assert again.sense == lp.sense
    assert again.A == pytest.approx(lp.A)
    assert again.b == pytest.approx(lp.b)
    assert again.signs == lp.signs


def test_lp_text_errors():
    with pytest.raises(DomainError):
        parse_lp_text("maximize\n1\nend")
    with pytest.raises(DomainError):
        parse_lp_text("max\n1 2\n1 <= 3\nend")
    with pytest.raises(DomainError):
        LinearProgram(sense="max", c=[1.0, 1.0], A=[[1.0, 1.0]], signs=["<"], b=[1.0])


def test_dual_and_primal_pk_on_two_half_queries():
    assert lp_optimum(build_dual_pk([0.5, 0.5], 1)) == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert lp_optimum(build_primal_pk([0.5, 0.5], 1)) == pytest.approx(2.0 / 3.0, abs=1e-8)


@pytest.mark.parametrize(
    "p, k",
    [([0.3, 0.2, 0.4], 1), ([0.6, 0.5, 0.4, 0.3], 2), ([0.2, 0.7, 0.5, 0.3, 0.2], 2)],
)
def test_construction_matches_lp_optimum(p, k):
    # Act
    dual = lp_optimum(build_dual_pk(p, k))
    primal = lp_optimum(build_primal_pk(p, k))

    # Assert
    assert dual == pytest.approx(primal, abs=1e-6)
    assert dual == pytest.approx(solve_theta_star(p, k), abs=1e-6)


def test_up_lp_of_budget_feasible_instance():
    assert lp_optimum(build_up_lp(as_multi(_footnote_instance()))) == pytest.approx(1.0)


def test_reachable_states_track_remaining_capacity():
    instance = bernoulli_instance([0.5, 0.5], [0.5, 0.5])
    assert reachable_states(instance) == [[2], [2, 1], [2, 1, 0]]


def test_dual_and_primal_pD_on_two_half_queries():
    instance = _footnote_instance()
    assert lp_optimum(build_dual_pD(instance)) == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert lp_optimum(build_primal_pD(instance)) == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_lemma3_check_two_half_queries():
    # Act
    report = lemma3_check(_footnote_instance())

    # Assert
    assert report.success, report.violations
    assert report.data["dual_optimum"] == pytest.approx(2.0 / 3.0, abs=1e-6)
    assert report.data["dp_ratio"] == pytest.approx(2.0 / 3.0, abs=1e-6)


def test_lemma3_check_single_deterministic_query():
    report = lemma3_check(bernoulli_instance([1.0], [1.0], [1.0]))
    assert report.success
    assert report.data["dual_optimum"] == pytest.approx(1.0)
