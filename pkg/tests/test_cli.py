import json
import os

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import manage
from cli import cli
from export_utils import write_connection_dump
from gauge_holonomy import log_radii, smooth_model


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def bad_scenario(scenario_path, tmp_path):
    with open(scenario_path("single_bubble"), encoding="utf-8") as fh:
        text = fh.read()
    path = tmp_path / "bad.toml"
    path.write_text(text.replace("count = 8", "count = 5"), encoding="utf-8")
    return str(path)


def _last_json(output):
    return json.loads(output.strip().splitlines()[-1])


def test_schema_command(runner, tmp_path):
    result = runner.invoke(cli, ["schema", "--out", str(tmp_path / "schemas")])
    assert result.exit_code == 0
    names = sorted(os.listdir(tmp_path / "schemas"))
    assert names == ["atoms.schema.json", "condition.schema.json", "report.schema.json", "tree.schema.json"]


@pytest.mark.parametrize("beta", ["0.25", "0.5"])
def test_holonomy_conic_model(runner, beta):
    result = runner.invoke(cli, ["holonomy", "--beta", beta])
    assert result.exit_code == 0
    report = _last_json(result.output)
    assert report["classification"] == "H_beta"
    assert abs(report["beta"] - float(beta)) < 1e-3


def test_holonomy_from_dump(runner, tmp_path):
    dump = write_connection_dump(smooth_model(log_radii(1e-3, 1e-1, 8)), str(tmp_path / "smooth.c16"))
    out = tmp_path / "condition.json"
    result = runner.invoke(cli, ["holonomy", dump, "--out", str(out)])
    assert result.exit_code == 0
    assert _last_json(result.output)["classification"] == "H"
    with open(out, encoding="utf-8") as fh:
        assert json.load(fh)["extension_eligible"] is True


def test_holonomy_needs_input(runner):
    result = runner.invoke(cli, ["holonomy"])
    assert result.exit_code == 2


def test_holonomy_rejects_narrow_annulus(runner):
    result = runner.invoke(cli, ["holonomy", "--beta", "0.5", "--r-min", "0.01", "--r-max", "0.05"])
    assert result.exit_code == 2


def test_run_rejects_invalid_scenario(runner, bad_scenario, tmp_path):
    result = runner.invoke(cli, ["run", bad_scenario, "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "at least 6 points" in result.output


def test_atoms_command(runner, scenario_path, tmp_path):
    result = runner.invoke(cli, ["--threads", "2", "atoms", scenario_path("two_peak"), "--out", str(tmp_path)])
    assert result.exit_code == 0
    with open(tmp_path / "atoms.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    assert len(doc["atoms"]) == 2


def test_kw_command_writes_field(runner, scenario_path, tmp_path):
    result = runner.invoke(cli, ["kw", scenario_path("single_bubble"), "--s", "40", "--out", str(tmp_path)])
    assert result.exit_code == 0
    assert (tmp_path / "fields" / "phi_s40.f64").exists()
    assert (tmp_path / "fields" / "phi_s40.json").exists()


def test_kw_command_unstable_s(runner, scenario_path, tmp_path):
    result = runner.invoke(cli, ["kw", scenario_path("single_bubble"), "--s", "3", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_manage_exit_codes(bad_scenario, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert manage.main(["holonomy", "--beta", "0.75"]) == 0
    assert manage.main(["run", bad_scenario, "--out", str(tmp_path / "out")]) == 2
    assert manage.main(["no-such-command"]) == 2


def test_kw_command_schedule(runner, scenario_path, tmp_path):
    result = runner.invoke(cli, ["kw", scenario_path("single_bubble"), "--s0", "20", "--ratio", "2",
                                 "--count", "3", "--out", str(tmp_path)])
    assert result.exit_code == 0
    for s in ("20", "40", "80"):
        assert (tmp_path / "fields" / f"phi_s{s}.f64").exists()
    table = pd.read_csv(tmp_path / "tables" / "kw.csv")
    assert list(table.columns) == ["s", "residual", "sup_error", "iterations"]
    assert list(table["s"]) == [20.0, 40.0, 80.0]
    assert np.all(np.diff(table["sup_error"]) < 0)


def test_kw_command_rejects_mixed_flags(runner, scenario_path, tmp_path):
    result = runner.invoke(cli, ["kw", scenario_path("single_bubble"), "--s", "40", "--count", "3",
                                 "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_holonomy_gauge_check_follows_seed(runner):
    outputs = [runner.invoke(cli, ["--seed", seed, "holonomy", "--beta", "0.5", "--gauge-checks", "4"]).output
               for seed in ("7", "7")]
    assert outputs[0] == outputs[1]
    checks = [line for line in outputs[0].splitlines() if line.startswith("gauge invariance:")]
    assert len(checks) == 1 and "seed 7" in checks[0]
    assert _last_json(outputs[0])["classification"] == "H_beta"
