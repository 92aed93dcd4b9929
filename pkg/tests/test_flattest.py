import pytest

from flatnf.diffgeo import span_equal
from flatnf.flattest import compute_sequences, sequence_checks
from flatnf.sysfile import load_system, parse_system_text
from flatnf.system import RankDeficientSystem

from conftest import FIXTURES


def sys_of(body, states="x1, x2", inputs="u1, u2"):
    return parse_system_text(f"system t\nstates: {states}\ninputs: {inputs}\n{body}")


@pytest.mark.parametrize(
    "name, dims, flat, sfl",
    [
        ("s5.sys", (2, 3, 5), True, False),
        ("s30.sys", (1, 3, 4), True, False),
        ("brunovsky.sys", (2, 4, 5), True, True),
        ("decoupled.sys", (2,), False, False),
        ("identity.sys", (1,), True, True),
        ("three_input.sys", (2, 4), True, False),
    ],
)
def test_fixture_verdicts(name, dims, flat, sfl):
    sys = load_system(FIXTURES / name)
    r = compute_sequences(sys)
    assert r.delta_dims == dims
    assert (r.flat, r.sfl) == (flat, sfl)
    failed = [c.name for c in sequence_checks(sys, r) if not c.passed]
    assert failed == []


def test_static_case_keeps_every_E(fixture_path):
    r = compute_sequences(load_system(fixture_path("brunovsky.sys")))
    assert all(span_equal(d, e) for d, e in zip(r.D, r.E))
    assert r.first_strict_step() is None


def test_strict_step_is_reported(s5):
    assert compute_sequences(s5).first_strict_step() == 1


def test_rank_deficient_inputs_rejected():
    sys = sys_of("x1+ = u1 + u2\nx2+ = 2*u1 + 2*u2")
    with pytest.raises(RankDeficientSystem):
        sys.check_rank_assumptions()


def test_single_chain_with_nonlinearity():
    r = compute_sequences(sys_of("x1+ = x2 + x1^2\nx2+ = u1", inputs="u1"))
    assert r.flat and r.sfl and r.delta_dims == (1, 2)


def test_stagnation_stops_early():
    sys = sys_of("x1+ = u1\nx2+ = u2\nx3+ = 2*x3 + 1", states="x1, x2, x3")
    r = compute_sequences(sys)
    assert not r.flat
    assert r.delta_dims[-1] == 2
