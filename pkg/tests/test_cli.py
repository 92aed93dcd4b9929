import json
import subprocess
import sys

import pytest

from flatnf.cli import main
from flatnf.report import REPORT_KEYS, render_text, validate

from conftest import FIXTURES


def run_cli(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize(
    "command, fixture, code",
    [
        ("check", "s5.sys", 0),
        ("check", "decoupled.sys", 1),
        ("normalform", "s30.sys", 0),
        ("normalform", "decoupled.sys", 1),
        ("normalform", "three_input.sys", 2),
        ("parameterize", "brunovsky.sys", 0),
        ("verify", "identity.sys", 0),
        ("check", "duplicate.sys", 2),
    ],
)
def test_exit_codes(capsys, command, fixture, code):
    assert run_cli(capsys, command, FIXTURES / fixture)[0] == code


def test_three_inputs_with_opt_in(capsys):
    code, out, _ = run_cli(capsys, "normalform", FIXTURES / "three_input.sys", "--force-multi", "--json")
    rep = json.loads(out)
    assert code == 2
    assert "m != 2" in rep["meta"]["error"]
    assert rep["verdicts"]["flat"]
    validate(rep)


def test_duplicate_reports_location(capsys):
    _, _, err = run_cli(capsys, "check", FIXTURES / "duplicate.sys")
    assert "duplicate.sys:5:1" in err


def test_missing_file(capsys):
    code, _, err = run_cli(capsys, "check", FIXTURES / "nope.sys")
    assert code == 2 and "nope.sys" in err


def test_bad_degree(capsys):
    assert run_cli(capsys, "check", FIXTURES / "s5.sys", "--max-degree", "0")[0] == 2


def test_report_shape_and_schema(capsys):
    code, out, _ = run_cli(capsys, "parameterize", FIXTURES / "s30.sys", "--json")
    rep = json.loads(out)
    assert code == 0
    assert tuple(rep) == REPORT_KEYS
    validate(rep)
    assert rep["parameterization"]["verification"]["ok"]
    assert all(c["passed"] for c in rep["checks"])


def test_text_comes_from_json(capsys):
    _, as_json, _ = run_cli(capsys, "normalform", FIXTURES / "s30.sys", "--json")
    _, as_text, _ = run_cli(capsys, "normalform", FIXTURES / "s30.sys")
    assert render_text(json.loads(as_json)) == as_text


def test_output_is_deterministic():
    cmd = [sys.executable, "-m", "flatnf.cli", "parameterize", str(FIXTURES / "s30.sys"), "--json"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b


def test_seed_is_recorded(capsys):
    _, out, _ = run_cli(capsys, "check", FIXTURES / "s5.sys", "--json", "--seed", "7", "--trials", "3")
    meta = json.loads(out)["meta"]
    assert (meta["seed"], meta["trials"]) == (7, 3)


def test_verify_replays_a_saved_report(capsys):
    code, out, _ = run_cli(capsys, "verify", FIXTURES / "s30_report.json")
    assert code == 0 and "FAIL" not in out


def test_verify_catches_an_edited_ledger(capsys):
    code, out, _ = run_cli(capsys, "verify", FIXTURES / "s30_broken_ledger.json")
    assert code == 1
    assert "FAIL Delta_1 straight in the final coordinates" in out


def test_saved_report_is_current(capsys):
    # the shipped report must match what the pipeline produces now
    _, out, _ = run_cli(capsys, "normalform", FIXTURES / "s30.sys", "--json")
    saved = json.loads((FIXTURES / "s30_report.json").read_text())
    fresh = json.loads(out)
    for key in ("changes", "normal_form", "flat_output", "zpartition"):
        assert fresh[key] == saved[key]
