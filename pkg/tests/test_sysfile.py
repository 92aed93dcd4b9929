import json

import pytest

from flatnf.sysfile import DuplicateEquation, SystemFileError, dump_system, load_system, parse_system_text

from conftest import FIXTURES


def test_dump_parses_back(s30):
    again = parse_system_text(dump_system(s30))
    assert again.states == s30.states and again.inputs == s30.inputs
    assert all((a - b).is_zero() for a, b in zip(again.f, s30.f))
    assert again.working_point == s30.working_point


def test_json_form(tmp_path, s5):
    p = tmp_path / "s5.json"
    p.write_text(json.dumps({
        "name": "s5",
        "states": [s.name for s in s5.states],
        "inputs": ["u1", "u2"],
        "equations": ["u2", "u1", "x1 + x2", "x1*(x4 + 1) + x3", "x4 + x1 + x5"],
    }))
    assert load_system(p).f == s5.f


def test_duplicate_equation_location():
    with pytest.raises(DuplicateEquation) as info:
        load_system(FIXTURES / "duplicate.sys")
    assert info.value.line == 5 and info.value.column == 1


def test_parse_error_points_into_the_line():
    text = "system t\nstates: x1\ninputs: u1\nx1+ = u1 + * 2\n"
    with pytest.raises(SystemFileError) as info:
        parse_system_text(text)
    assert info.value.line == 4 and info.value.column == 12


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("states: x1\ninputs: u1\n", "missing equation"),
        ("states: x1\ninputs: u1\nx2+ = u1\n", "undeclared state"),
        ("states: x1\ninputs: x1\nx1+ = x1\n", "declared twice"),
        ("states: x1\nx1+ = x1\n", "no inputs"),
        ("states: x1\ninputs: u1\nequilibrium: x1=abc\nx1+ = u1\n", "not a rational"),
    ],
)
def test_malformed_files(text, fragment):
    with pytest.raises(SystemFileError, match=fragment):
        parse_system_text(text)


def test_comments_and_blank_lines():
    sys = parse_system_text("# head\n\nstates: x1   # one\ninputs: u1\nx1+ = u1  # delay\n")
    assert sys.n == 1 and sys.m == 1
