import json

import pytest

from app.main import build_parser, run

MEASURE = {
    "domain": {"m": 1},
    "field": {"family": "constant", "matrix": [[1.0]]},
    "pole": {"X": [0.5], "Y": [0.0], "t": 0.0},
    "partition": {"r": 0.5, "n_Y": 4, "n_t": 4, "t_center": -1.0},
    "sde": {"n_paths": 600, "max_time": 2.0, "batch_size": 128},
}


def _write(tmp_path, name, content):
    path = tmp_path / name
    path.write_text(content if isinstance(content, str) else json.dumps(content))
    return str(path)


def test_help_and_version_exit_zero(capsys):
    assert run(["--version"]) == 0
    assert "kolmogorov-lab" in capsys.readouterr().out
    assert run(["verify", "--help"]) == 0


def test_usage_errors_exit_two():
    assert run([]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["verify", "no-such-suite"]) == 2
    assert run(["cell", "--format", "xml"]) == 2


def test_subcommands_are_registered():
    parser = build_parser()
    args = parser.parse_args(["geom-check", "--seed", "3", "--threads", "2"])
    assert args.command == "geom-check"
    assert args.seed == 3 and args.threads == 2
    assert callable(args.handler)


def test_missing_required_key_names_the_key(tmp_path, caplog):
    cfg = _write(tmp_path, "cell.json", {"grid": 16})
    assert run(["cell", "--config", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "field" in caplog.text


def test_malformed_json_exits_two(tmp_path, caplog):
    cfg = _write(tmp_path, "bad.json", "{\"field\": ")
    assert run(["cell", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "line 1" in caplog.text


def test_unknown_key_exits_two(tmp_path):
    cfg = _write(tmp_path, "cell.json", {"field": {"family": "constant", "matrix": [[1.0]]}, "colour": "red"})
    assert run(["cell", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cfl_violation_exits_three(tmp_path):
    cfg = _write(tmp_path, "solve.json", {
        "domain": {"m": 1}, "field": {"family": "constant", "matrix": [[1.0]]}, "operator": "kolmogorov",
        "box": {"lo": [0.0, -1.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "data": "x", "steps": [8, 8, 1],
    })
    assert run(["solve", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_cell_writes_reports(tmp_path):
    cfg = _write(tmp_path, "cell.json", {"field": {"family": "laminate", "means": [2.0], "amplitudes": [1.0]},
                                         "grid": 64})
    out = tmp_path / "out"
    assert run(["cell", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
    document = json.loads((out / "cell.json").read_text())
    assert document["result"]["matrix"][0][0] == pytest.approx(3.0 ** 0.5, abs=1e-6)
    assert document["provenance"]["seed"] == 5
    header = (out / "cell.matrix.csv").read_text().splitlines()[0]
    assert header.startswith("# config_hash=") and "seed=5" in header
    assert (out / "cell.meta.json").exists()


def test_json_only_format(tmp_path):
    cfg = _write(tmp_path, "cell.json", {"field": {"family": "constant", "matrix": [[1.0]]}, "grid": 8})
    assert run(["cell", "--config", cfg, "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    assert not list((tmp_path / "o").glob("*.csv"))


def test_measure_json_does_not_depend_on_threads(tmp_path):
    cfg = _write(tmp_path, "measure.json", MEASURE)
    for threads in (1, 4):
        assert run(["measure", "--config", cfg, "--seed", "11", "--threads", str(threads),
                    "--out", str(tmp_path / f"t{threads}")]) == 0
    one = (tmp_path / "t1" / "measure.json").read_bytes()
    four = (tmp_path / "t4" / "measure.json").read_bytes()
    assert one == four
    assert (tmp_path / "t1" / "measure.cells.csv").read_text().startswith("# config_hash=")


def test_verify_group_axioms(tmp_path):
    assert run(["verify", "group-axioms", "--seed", "7", "--out", str(tmp_path)]) == 0
    document = json.loads((tmp_path / "verify-group-axioms.json").read_text())
    assert document["passed"] is True
    assert document["result"]["scale"] == "quick"
    assert (tmp_path / "verify-group-axioms.checks.csv").exists()
