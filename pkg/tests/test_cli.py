import csv
import io
import json

import jsonschema
import numpy as np
import pytest

from integrable.cli import main
from integrable.pipeline import REPORT_SCHEMA, run_pipeline
from integrable.specfile import SpecError, load_spec, parse_spec

CATALOG = ["oscillator", "two_oscillators", "free_particle", "cylinder", "central_field", "canonical_pair"]
EXPECTED_EXIT = {"canonical_pair": 2}

MINIMAL = """
[system]
coords = p, q
[functions]
H = "(p^2 + q^2)/2"
[box]
p = -1, 1
q = -1, 1
"""


def _strip_clock(obj):
    if isinstance(obj, dict):
        return {k: _strip_clock(v) for k, v in obj.items() if k != "wall_clock_s"}
    if isinstance(obj, list):
        return [_strip_clock(v) for v in obj]
    return obj


@pytest.fixture(scope="module")
def reports():
    from integrable import catalog_path

    return {name: run_pipeline(load_spec(catalog_path(name))) for name in CATALOG}


@pytest.mark.parametrize("name", CATALOG)
def test_catalog_reports_validate(reports, name):
    report = reports[name]
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["exit_code"] == EXPECTED_EXIT.get(name, 0)
    # every numeric check carries its tolerance
    for stage in report["stages"].values():
        if stage["status"] in ("passed", "failed") and any(k in stage for k in ("max_residual", "curvature", "darboux_residual")):
            assert "tol" in stage


def test_oscillator_report(reports):
    r = reports["oscillator"]["stages"]
    assert r["brackets"]["verdict"] == "complete(1)"
    assert r["lattice"]["fiber"] == "T^1"
    assert abs(r["action_angle"]["actions"][0] - r["action_angle"]["function_values"][0]) < 1e-6
    assert r["global"]["verdict"]["bundle_trivial"] == "true"


def test_central_field_report(reports):
    r = reports["central_field"]["stages"]
    assert r["brackets"]["verdict"] == "noncommutative(4, 2)"
    assert r["lattice"]["h"] == 2
    assert r["connection"]["curvature"] < 1e-6


def test_free_particle_and_cylinder(reports):
    assert reports["free_particle"]["stages"]["lattice"]["h"] == 0
    assert reports["cylinder"]["stages"]["lattice"]["fiber"] == "R^1 x T^1"


def test_canonical_pair_localized(reports):
    b = reports["canonical_pair"]["stages"]["brackets"]
    assert b["status"] == "failed" and b["worst_pair"] == [1, 2]


def test_check_exit_code_and_out_dir(catalog, tmp_path):
    assert main(["check", catalog("oscillator"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)


def test_deterministic_reports(catalog, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        main(["check", catalog("free_particle"), "--out", str(out), "--seed", "7"])
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert _strip_clock(ra) == _strip_clock(rb)
    assert ra["seed"] == 7


def test_malformed_spec_exit_one(catalog, capsys):
    assert main(["check", catalog("malformed")]) == 1
    err = capsys.readouterr().err
    assert "malformed.ini:6" in err and "offset 10" in err


def test_missing_file(capsys, tmp_path):
    assert main(["check", str(tmp_path / "nope.ini")]) == 1
    assert "cannot read spec" in capsys.readouterr().err


def test_schema_printed(capsys):
    assert main(["report", "--schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema == json.loads(json.dumps(REPORT_SCHEMA))


def test_flow_csv(catalog, capsys):
    assert main(["flow", catalog("oscillator"), "--field", "H", "--t", "1.0", "--start", "0,1"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["t", "x1", "x2"]
    t, p, q = map(float, rows[-1])
    assert t == 1.0 and np.allclose([p, q], [np.sin(1.0), np.cos(1.0)], atol=1e-8)


def test_flow_unknown_field(catalog, capsys):
    assert main(["flow", catalog("oscillator"), "--field", "K", "--t", "1"]) == 1
    assert "unknown field" in capsys.readouterr().err


def test_flow_writes_file(catalog, tmp_path):
    assert main(["flow", catalog("central_field"), "--field", "J", "--t", "0.5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "flow_J.csv").read_text().startswith("t,x1,")


def test_lattice_command(catalog, capsys):
    assert main(["lattice", catalog("oscillator")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["h"] == 1 and abs(out["basis"][0][0] - 2 * np.pi) < 1e-8


def test_tolerance_override_makes_check_fail(catalog, tmp_path):
    # an impossible Darboux tolerance fails the action-angle stage
    assert main(["check", catalog("oscillator"), "--tol-darboux", "1e-14", "--out", str(tmp_path)]) == 2


def test_spec_parse_errors_have_lines():
    with pytest.raises(SpecError) as info:
        parse_spec(MINIMAL.replace("q = -1, 1", "q = 1, -1"), "m.ini")
    assert info.value.line == 8
    with pytest.raises(SpecError) as info:
        parse_spec(MINIMAL.replace("coords = p, q", "coords = p, q, r"), "m.ini")
    assert "even" in str(info.value)
    with pytest.raises(SpecError):
        parse_spec(MINIMAL + "[tolerances]\nwobble = 1\n")


def test_spec_defaults():
    spec = parse_spec(MINIMAL)
    assert spec.seed == 0 and spec.samples == 100
    assert spec.resolved_mode == "complete"
    assert spec.tolerances["involution"] == 1e-12
