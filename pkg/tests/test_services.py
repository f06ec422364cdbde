import json
from argparse import Namespace

import numpy as np
import pytest
from pydantic import ValidationError

from app.dependencies import config_hash, load_config, resolve_context
from app.exceptions import ValidationFailure
from app.schemas import CellConfig, GeomCheckConfig, HomogenizeConfig, MeasureConfig, SolveConfig, VerifyConfig
from app.services.experiment_service import ExperimentService, lookup_data
from app.services.report_service import Report, plain, report_service, summary_markdown
from app.services.verification_service import SUITES, verification_service

FLAT1 = {"m": 1}
IDENTITY1 = {"family": "constant", "matrix": [[1.0]]}
SINUSOID = {"family": "laminate", "means": [2.0], "amplitudes": [1.0]}


@pytest.fixture
def service():
    return ExperimentService()


def _args(tmp_path, command="cell", **overrides):
    values = {"command": command, "config": None, "seed": None, "threads": None, "format": None,
              "out": str(tmp_path)}
    values.update(overrides)
    return Namespace(**values)


def test_geom_check_report(service):
    cfg = GeomCheckConfig(m=1, n_samples=500, triangle_samples=1000, ball_samples=20000, radii=[1.0, 2.0])
    report = service.geom_check(cfg, seed=3)
    assert report.payload["q"] == 6
    assert max(report.payload["group_errors"].values()) < 1e-12
    balls = report.tables["balls"]
    assert balls[1]["rel_error"] < 1e-12


def test_geom_check_with_cubes_and_whitney(service):
    cfg = GeomCheckConfig.model_validate({
        "m": 1, "n_samples": 200, "triangle_samples": 200, "ball_samples": 2000,
        "domain": FLAT1,
        "cubes": {"window_lo": [0.0, 0.0], "window_hi": [1.0, 1.0], "k_max": 1},
        "whitney": {"depth": 4},
    })
    payload = service.geom_check(cfg, seed=0).payload
    assert payload["cubes"]["nesting_violations"] == 0
    assert payload["cubes"]["partition_failures"] == 0
    assert payload["whitney"]["dilates_inside"]


def test_geom_check_dyadic_whitney_reports_its_dilation(service):
    cfg = GeomCheckConfig.model_validate({
        "m": 1, "n_samples": 200, "triangle_samples": 200, "ball_samples": 2000,
        "domain": FLAT1,
        "whitney": {"depth": 3, "scheme": "dyadic"},
    })
    whitney = service.geom_check(cfg, seed=0).payload["whitney"]
    assert whitney["scheme"] == "dyadic"
    assert whitney["dilation"] == 4.0
    assert whitney["dilates_inside"]
    assert whitney["h_bottom"] == 0.125


def test_cell_report_is_cached(service):
    cfg = CellConfig.model_validate({"field": SINUSOID, "grid": 128})
    first = service.cell(cfg)
    assert first.payload["matrix"][0, 0] == pytest.approx(np.sqrt(3.0), abs=5e-3)
    key = next(iter(service._cache))
    assert service.cell(cfg).payload["matrix"] is service._cache[key].matrix


def test_cell_correctors_table(service):
    cfg = CellConfig.model_validate({"field": SINUSOID, "grid": 16, "correctors": True})
    report = service.cell(cfg)
    assert len(report.tables["correctors"]) == 16


def test_solve_reports_exact_error(service):
    cfg = SolveConfig.model_validate({
        "domain": FLAT1, "field": IDENTITY1, "operator": "kolmogorov",
        "box": {"lo": [0.0, -1.0, 0.0], "hi": [1.0, 1.0, 0.25]}, "data": "y_plus_tx", "steps": [16, 32, 8],
        "probes": [[0.5, 0.0, 0.25]], "slices": [{"axis": 2, "index": 8}],
    })
    report = service.solve(cfg)
    assert report.payload["max_error"] < 1e-10
    assert report.tables["probes"][0]["value"] == pytest.approx(0.125)
    assert "slice_2_8" in report.slices


def test_unknown_data_is_rejected():
    with pytest.raises(ValidationFailure):
        lookup_data("parabolic", "y_plus_tx")


def test_measure_report(service):
    cfg = MeasureConfig.model_validate({
        "domain": FLAT1, "field": IDENTITY1, "pole": {"X": [0.5], "Y": [0.0], "t": 0.0}, "kind": "K",
        "partition": {"r": 0.5, "n_Y": 3, "n_t": 2, "t_center": -0.5},
        "sde": {"n_paths": 500, "max_time": 1.0, "batch_size": 250},
        "doubling_factor": 2.0,
    })
    report = service.measure(cfg, seed=5, threads=2)
    payload = report.payload
    assert payload["n_paths"] == 500
    assert len(report.tables["cells"]) == 6
    assert "kernel" in report.tables["cells"][0]
    assert "doubling" in payload


def test_measure_needs_exactly_one_pole():
    with pytest.raises(ValidationError):
        MeasureConfig.model_validate({"domain": FLAT1, "field": IDENTITY1, "partition": {"r": 0.5}})


def test_homogenize_report(service):
    cfg = HomogenizeConfig.model_validate({"field": IDENTITY1, "eps": [0.5, 0.25], "grid": 16})
    report = service.homogenize(cfg)
    assert len(report.tables["sweep"]) == 2
    assert max(row["error"] for row in report.tables["sweep"]) < 1e-8


def test_plain_converts_numpy_and_non_finite():
    doc = plain({"a": np.arange(3), "b": np.float64("inf"), "c": np.bool_(True), 1: (np.int64(2),)})
    assert doc == {"a": [0, 1, 2], "b": None, "c": True, "1": [2]}


def test_report_files(tmp_path):
    cfg = CellConfig.model_validate({"field": SINUSOID, "grid": 16})
    ctx = resolve_context(_args(tmp_path, seed=9), cfg)
    report = Report("cell", {"value": np.float64(1.5)}, {"rows": [{"a": 1, "b": [1, 2]}]})
    report_service.write(report, ctx, cfg)
    document = json.loads((tmp_path / "cell.json").read_text())
    assert document["result"] == {"value": 1.5}
    assert document["provenance"]["seed"] == 9
    assert document["provenance"]["config_hash"] == config_hash(cfg, "cell")
    lines = (tmp_path / "cell.rows.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={ctx.config_hash} seed=9 version={ctx.version}"
    assert lines[1] == "a,b"
    meta = json.loads((tmp_path / "cell.meta.json").read_text())
    assert meta["artifacts"] == ["cell.json", "cell.rows.csv"]


def test_summary_markdown_lists_scalars_and_tables():
    report = Report("cell", {"kappa": 3.0}, {"rows": [{"a": 1}]}, passed=True)
    document = {"provenance": {"command": "cell", "seed": 0, "config_hash": "abc", "version": "0.1.0",
                               "config": {}}, "result": {"kappa": 3.0}}
    text = summary_markdown(report, document)
    assert "| kappa | 3 |" in text
    assert "## rows" in text


def test_config_hash_ignores_the_seed():
    a = CellConfig.model_validate({"field": SINUSOID, "seed": 1})
    b = CellConfig.model_validate({"field": SINUSOID, "seed": 2})
    assert config_hash(a, "cell") == config_hash(b, "cell")
    assert config_hash(a, "cell") != config_hash(a, "verify")


def test_seed_precedence(tmp_path):
    cfg = CellConfig.model_validate({"field": SINUSOID, "seed": 4})
    assert resolve_context(_args(tmp_path), cfg).seed == 4
    assert resolve_context(_args(tmp_path, seed=8), cfg).seed == 8
    with pytest.raises(ValidationFailure):
        resolve_context(_args(tmp_path, seed=-1), cfg)
    with pytest.raises(ValidationFailure):
        resolve_context(_args(tmp_path, threads=-2), cfg)


def test_load_config_errors(tmp_path):
    assert load_config(None) == {}
    bad = tmp_path / "bad.json"
    bad.write_text("{\"m\": 1,")
    with pytest.raises(ValidationFailure, match="line 1"):
        load_config(str(bad))
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ValidationFailure):
        load_config(str(listing))
    with pytest.raises(ValidationFailure):
        load_config(str(tmp_path / "missing.json"))


def test_verify_rejects_unknown_names():
    with pytest.raises(ValidationFailure):
        verification_service.run("nope", "quick", 0, 1)
    with pytest.raises(ValidationFailure):
        verification_service.run("maximal", "huge", 0, 1)
    assert VerifyConfig().scale == "quick"


@pytest.mark.parametrize("name", ["group-axioms", "ball-scaling", "effective-tensor", "maximal", "determinism"])
def test_quick_suites_pass(name):
    report = verification_service.run(name, "quick", 7, 2)
    failed = report.payload["suites"][name]["failed"]
    assert report.passed, failed


@pytest.mark.slow
@pytest.mark.parametrize("name", ["cubes", "homogenization", "solver", "fundamental-solution", "measure-oracles",
                                  "comparability", "doubling", "bq-coupling"])
def test_heavy_quick_suites_pass(name):
    report = verification_service.run(name, "quick", 7, 4)
    assert report.passed, report.payload["suites"][name]["failed"]


def test_every_suite_is_covered():
    assert len(SUITES) == 13
