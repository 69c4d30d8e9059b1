import csv
import json

import pytest
from typer.testing import CliRunner

from magician.main import app

runner = CliRunner()


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    # session logs land under ./output
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def test_gamma_k_table(in_tmp):
    # Act
    result = runner.invoke(app, ["--out", "g.json", "gamma-k", "--k-max", "2"])

    # Assert
    assert result.exit_code == 0, result.output
    rows = _read_json(in_tmp / "g.json")
    assert [r["k"] for r in rows] == [1, 2]
    assert rows[1]["gamma_star"] == pytest.approx(0.6148, abs=5e-4)
    assert rows[0]["euler"] is None


def test_gamma_k_rejects_large_k():
    result = runner.invoke(app, ["gamma-k", "--k-max", "40"])
    assert result.exit_code != 0


def test_generate_is_deterministic(in_tmp):
    # Act
    args = ["--param", "T=4", "--param", "seed=3"]
    first = runner.invoke(app, ["generate", "random", "a.json", *args])
    second = runner.invoke(app, ["generate", "random", "b.json", *args])

    # Assert
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output
    assert (in_tmp / "a.json").read_text() == (in_tmp / "b.json").read_text()
    assert _read_json(in_tmp / "a.json")["T"] == 4


def test_generate_unknown_name():
    result = runner.invoke(app, ["generate", "nope", "x.json"])
    assert result.exit_code == 1


def test_kunit_theta_star(in_tmp):
    result = runner.invoke(app, ["--out", "t.json", "kunit", "theta-star", "--probs", "0.5,0.5"])
    assert result.exit_code == 0, result.output
    assert _read_json(in_tmp / "t.json")["theta_star"] == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_kunit_certify(in_tmp):
    result = runner.invoke(app, ["--out", "c.json", "kunit", "certify", "--probs", "0.3,0.2,0.4"])
    assert result.exit_code == 0, result.output
    assert _read_json(in_tmp / "c.json")["success"] is True


def test_knapsack_run_from_generator(in_tmp):
    # Act
    result = runner.invoke(
        app, ["--out", "k.json", "knapsack", "run", "--generator", "random", "--param", "T=5"]
    )

    # Assert
    assert result.exit_code == 0, result.output
    run = _read_json(in_tmp / "k.json")
    assert run["feasible"] is True
    assert len(run["gammas"]) == 5


def test_knapsack_run_needs_exactly_one_source(in_tmp):
    runner.invoke(app, ["generate", "random", "a.json"])
    result = runner.invoke(app, ["knapsack", "run", "--instance", "a.json", "--generator", "random"])
    assert result.exit_code == 1


def test_lp_solve_dual_pk(in_tmp):
    # Act
    result = runner.invoke(
        app,
        ["--out", "lp.json", "lp", "solve", "--which", "dual-pk", "--probs", "0.5,0.5", "--export", "d.lp"],
    )

    # Assert
    assert result.exit_code == 0, result.output
    assert _read_json(in_tmp / "lp.json")["objective"] == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert (in_tmp / "d.lp").read_text().startswith("max")


def test_simulate_writes_csv_summary(in_tmp):
    # Act
    result = runner.invoke(
        app,
        [
            "--out", "s.csv", "--format", "csv", "--seed", "3",
            "simulate", "--policy", "bestfit", "--generator", "random", "--param", "T=4", "--trials", "200",
        ],
    )

    # Assert
    assert result.exit_code == 0, result.output
    with open(in_tmp / "s.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["policy"] == "bestfit"
    assert float(rows[0]["mean"]) >= 0.0


def test_unknown_format_is_rejected():
    result = runner.invoke(app, ["--format", "xml", "gamma-k", "--k-max", "1"])
    assert result.exit_code == 1


def test_reproduce_unknown_target_fails(in_tmp):
    result = runner.invoke(app, ["--out", "r.json", "reproduce", "bogus"])
    assert result.exit_code == 1
    assert _read_json(in_tmp / "r.json")["success"] is False
