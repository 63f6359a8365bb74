import json

import pytest
from click.testing import CliRunner

from src.artifacts import read_json
from src.main import cli


def _write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


@pytest.fixture
def runner():
    return CliRunner()


# ===== CONFIG ERRORS =====


def test_unknown_config_key_exits_with_config_error(runner, tmp_path):
    config = _write_config(tmp_path / "neck.json", {"command": "neck-test", "lenghts": [4.0, 8.0]})
    result = runner.invoke(cli, ["neck-test", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert not (tmp_path / "out" / "summary.json").exists()


def test_config_for_another_command(runner, tmp_path):
    config = _write_config(tmp_path / "neck.json", {"command": "neck-test"})
    result = runner.invoke(cli, ["spectrum", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_invalid_json(runner, tmp_path):
    config = tmp_path / "broken.json"
    config.write_text("{\"command\": ", encoding="utf-8")
    result = runner.invoke(cli, ["sylvester-test", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_schedule_validation(runner, tmp_path):
    config = _write_config(tmp_path / "bubble.json", {"command": "bubble-run", "schedule": [0.1, 0.2]})
    result = runner.invoke(cli, ["bubble-run", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2


def test_mesh_level_above_limit(runner, tmp_path):
    config = _write_config(
        tmp_path / "embedding.json",
        {"command": "embedding-test", "manifolds": ["sphere2"], "lambda_sweep": [4.0], "samples": 200},
    )
    result = runner.invoke(
        cli, ["embedding-test", "--config", str(config), "--out", str(tmp_path / "out"), "--mesh-level", "7"]
    )
    assert result.exit_code == 3


# ===== RUNS =====


def test_sylvester_run_writes_summary(runner, tmp_path):
    config = _write_config(
        tmp_path / "sylvester.json",
        {
            "command": "sylvester-test",
            "trials": 5,
            "max_dim": 10,
            "pde_levels": [1],
            "pde_families": ["constant"],
        },
    )
    out = tmp_path / "out"
    result = runner.invoke(cli, ["sylvester-test", "--config", str(config), "--out", str(out), "--seed", "7"])
    assert result.exit_code == 0, result.output
    summary = read_json(out / "summary.json")
    assert summary["status"] == "PASS"
    assert summary["seed"] == 7
    assert summary["schema_version"] == 1
    assert "random_trials.csv" in summary["artifacts"]
    assert summary["artifacts"] == sorted(summary["artifacts"])
    resolved = read_json(out / "resolved_config.json")
    assert resolved["trials"] == 5
    assert resolved["seed"] == 7
    names = {a["name"] for a in summary["assertions"]}
    assert {"random_inertia_agree", "diagonal_inertia", "assembled_inertia[constant,L1]"} <= names


def test_same_seed_gives_same_tables(runner, tmp_path):
    config = _write_config(
        tmp_path / "sylvester.json",
        {"command": "sylvester-test", "trials": 4, "max_dim": 8, "pde_families": []},
    )
    tables = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(cli, ["sylvester-test", "--config", str(config), "--out", str(out)])
        assert result.exit_code == 0, result.output
        tables.append((out / "random_trials.csv").read_text(encoding="utf-8"))
    assert tables[0] == tables[1]
