import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pytest
from numpy.testing import assert_allclose
from PIL import Image

from errors import ScenarioError
from export_utils import (emit_outputs, heatmap_pixels, read_field_dump, to_builtin, validate_document,
                          write_connection_dump, write_field_dump, write_heatmap)
from gauge_holonomy import conic_model, log_radii
from holomorphic_data import HoloMap, energy_density
from scenario import STAGES, load_scenario, parse_scenario, run_scenario
from sphere_geometry import build_grid, harmonic


def _data(scenario_path, name="single_bubble"):
    with open(scenario_path(name), "rb") as fh:
        return tomllib.load(fh)


def test_bundled_scenarios_load(scenario_path):
    for name in ("single_bubble", "two_scale", "two_peak"):
        sc = load_scenario(scenario_path(name), n_jobs=1)
        assert sc.name == name
        assert sc.schedule.size == sc.count
        assert sc.tree.n_jobs == 1


def test_json_scenario_matches_toml(scenario_path, tmp_path):
    path = tmp_path / "single_bubble.json"
    path.write_text(json.dumps(_data(scenario_path)), encoding="utf-8")
    assert load_scenario(str(path), 1).to_json() == load_scenario(scenario_path("single_bubble"), 1).to_json()


@pytest.mark.parametrize("section,key,value", [
    ("schedule", "s0", 3.0),
    ("schedule", "count", 5),
    ("schedule", "ratio", 1.0),
    ("bubbles", "C0", 0.6),
    ("grid", "L_max", 2),
    ("holonomy", "beta", 1.5),
    ("holonomy", "radii", [0.01, 0.02, 0.03, 0.04, 0.05]),
    ("scenario", "schema_version", 2),
    ("family", "delta", "1/(s"),
])
def test_invalid_scenarios_rejected(scenario_path, section, key, value):
    data = _data(scenario_path)
    data[section][key] = value
    with pytest.raises(ScenarioError) as info:
        parse_scenario(data)
    assert info.value.exit_code == 2


def test_missing_section_rejected(scenario_path):
    data = _data(scenario_path)
    del data["schedule"]
    with pytest.raises(ScenarioError):
        parse_scenario(data)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(str(tmp_path / "nope.toml"))


@pytest.fixture(scope="module")
def single_run():
    path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                        "scenarios", "single_bubble.toml")
    return run_scenario(load_scenario(path, n_jobs=2))


def test_full_run_succeeds(single_run):
    assert single_run.exit_code == 0
    assert all(info["status"] == "ok" for info in single_run.stages.values())
    assert list(single_run.stages) == list(STAGES)
    assert single_run.tree.total_energy == 1
    assert single_run.conservation["passed"]
    results = single_run.results
    assert_allclose(results["family"]["last_energy"], 1.0, rtol=1e-8)
    assert results["vortex"]["residual_identity"] <= 1e-9
    assert results["vortex"]["bogomolny_gap"] < 1e-6
    assert results["atoms"]["uhlenbeck"]["stratum"] == [1, 0]
    assert results["holonomy"]["conic_model"]["classification"] == "H_beta"
    assert results["holonomy"]["smooth_model"]["classification"] == "H"
    tails = results["holonomy"]["energy_tails"]
    assert [t["node"] for t in tails] == ["root/0"]
    assert tails[0]["within_bound"]


def test_full_run_outputs(single_run, tmp_path):
    written = emit_outputs(single_run, str(tmp_path))
    assert all(os.path.exists(p) for p in written)
    with open(tmp_path / "report.json", encoding="utf-8") as fh:
        report = json.load(fh)
    validate_document(report, "report")
    assert report["exit_code"] == 0
    with open(tmp_path / "tree.json", encoding="utf-8") as fh:
        assert json.load(fh)["total_energy"] == 1
    for name in ("kw_sweep", "vortex", "atoms", "scales"):
        assert (tmp_path / "tables" / f"{name}.csv").exists()
    phi = read_field_dump(str(tmp_path / "fields" / "phi.f64"))
    np.testing.assert_array_equal(phi.values, single_run.fields["phi"].values)
    assert (tmp_path / "heatmaps" / "energy_last.pgm").exists()


def test_excel_tables(single_run, tmp_path):
    emit_outputs(single_run, str(tmp_path), excel=True)
    assert (tmp_path / "tables" / "kw_sweep.xlsx").exists()


def test_failed_stage_keeps_earlier_results(scenario_path):
    data = _data(scenario_path)
    data["kw"]["max_iter"] = 1
    data["kw"]["tol"] = 1e-15
    report = run_scenario(parse_scenario(data, n_jobs=1), ("family", "kw_sweep", "tree"))
    assert report.failed_stage == "kw_sweep"
    assert report.exit_code == 3
    assert report.stages["family"]["status"] == "ok"
    assert report.stages["tree"]["status"] == "skipped"
    assert "family" in report.results
    validate_document(to_builtin(report.to_json()), "report")


def test_run_is_thread_count_independent(scenario_path):
    stages = ("family", "atoms", "tree")
    docs = []
    for n_jobs in (1, 4):
        report = run_scenario(load_scenario(scenario_path("two_peak"), n_jobs), stages)
        doc = to_builtin(report.to_json())
        doc.pop("timings")
        docs.append(json.dumps(doc, sort_keys=True))
    assert docs[0] == docs[1]


def test_field_dump_is_bit_exact(grid16, tmp_path):
    f = harmonic(grid16, 3, -2) * np.pi
    path = write_field_dump(f, str(tmp_path), "y3")
    back = read_field_dump(path)
    assert back.values.tobytes() == f.values.tobytes()
    assert back.grid.L_max == 16
    with open(tmp_path / "y3.json", encoding="utf-8") as fh:
        assert json.load(fh)["dtype"] == "<f8"


def test_connection_dump_is_bit_exact(tmp_path):
    c = conic_model(0.3, log_radii(1e-3, 1e-1, 7), 32, perturbation=0.2)
    path = write_connection_dump(c, str(tmp_path / "conn.c16"))
    back = read_field_dump(path)
    assert back.A_theta.tobytes() == c.A_theta.tobytes()
    assert back.A_rho.tobytes() == c.A_rho.tobytes()
    np.testing.assert_array_equal(back.rho, c.rho)
    np.testing.assert_array_equal(back.theta, c.theta)


def test_heatmap_peaks_at_bubble(tmp_path):
    grid = build_grid(32)
    f = HoloMap.from_components([[-0.05, 1.0], [0.05, 1.0]])
    e = energy_density(f, grid)
    pixels = heatmap_pixels(e)
    assert pixels.dtype == np.uint8 and pixels.shape == grid.shape
    assert pixels.max() == 255
    assert np.argmax(pixels.max(axis=1)) == grid.shape[0] - 1
    path = write_heatmap(e, str(tmp_path), "bubble")
    with Image.open(path) as image:
        assert image.mode == "L"
        assert image.size == (grid.shape[1], grid.shape[0])


def test_flat_heatmap_is_black(grid16):
    assert not heatmap_pixels(grid16.constant(2.0)).any()
