import pytest

from flatnf.normalform import (
    CoordChange,
    StructureViolation,
    PreconditionError,
    apply_change,
    build_parameterization,
    normal_form,
    triangular_checks,
    triangular_form_from_change,
    verify_parameterization,
)
from flatnf.symkernel import Expr, SolveError, Var, parse, to_str
from flatnf.sysfile import load_system

from conftest import FIXTURES


@pytest.fixture(scope="module")
def nf30():
    sys = load_system(FIXTURES / "s30.sys")
    return sys, normal_form(sys)


def names(block):
    return sorted(v.name for v in block)


def test_ledger_round_trips(nf30):
    _, r = nf30
    for ch in r.changes:
        assert ch.is_invertible(), ch.label


def test_only_the_first_change_is_general(nf30):
    _, r = nf30
    first, *rest = r.changes
    assert first.kind == "state" and not first.structure_preserving
    assert all(c.structure_preserving for c in rest)


def test_final_form_is_triangular(nf30):
    _, r = nf30
    assert all(c.passed for c in triangular_checks(r.final))


def test_flat_output_pulls_back_to_original_states(nf30):
    sys, r = nf30
    assert all(e.free_vars() <= set(sys.states) for e in r.flat_output)


def test_parameterization_verifies(nf30):
    sys, r = nf30
    p = build_parameterization(r.final, sys)
    ok, residuals = verify_parameterization(sys, p)
    assert ok and all(res.is_zero() for _, res in residuals)
    assert sum(p.R) + len(p.R) >= sys.n


def test_sampled_verification_agrees(nf30):
    sys, r = nf30
    p = build_parameterization(r.final, sys)
    chk = verify_parameterization(sys, p, symbolic_limit=0)
    assert chk.ok and chk.method.startswith("pointwise")


def test_tampered_parameterization_fails(nf30):
    sys, r = nf30
    p = build_parameterization(r.final, sys)
    x1 = sys.states[0]
    p.Fx[x1] = p.Fx[x1] + 1
    assert not verify_parameterization(sys, p).ok
    assert not verify_parameterization(sys, p, symbolic_limit=0).ok


def test_apply_change_shift():
    sys = load_system(FIXTURES / "identity.sys")
    (x1,), (u1,) = sys.states, sys.inputs
    z = Var("z1", "state")
    ch = CoordChange({z: Expr.var(x1) + 1}, {x1: Expr.var(z) - 1}, "state", True, (x1, u1), (z, u1))
    out = apply_change(sys, ch)
    assert to_str(out.f[0]) == "u1 + 1"


def test_non_flat_system_refused():
    with pytest.raises(PreconditionError):
        normal_form(load_system(FIXTURES / "decoupled.sys"))


def test_three_inputs_need_opt_in():
    with pytest.raises(PreconditionError):
        normal_form(load_system(FIXTURES / "three_input.sys"))


def test_hand_change_must_be_invertible(s30):
    new = Var("w1", "state")
    fw = {v: Expr.var(v) for v in s30.xu[1:]}
    fw[new] = parse("x1^2", s30.xu)
    with pytest.raises((SolveError, StructureViolation)):
        triangular_form_from_change(s30, fw, [], [], [])


def test_static_chains_keep_their_shape():
    sys = load_system(FIXTURES / "brunovsky.sys")
    r = normal_form(sys)
    assert r.seq.sfl
    eqs = sorted(to_str(e) for e in r.final.system.f)
    # every equation is a single variable: a pure delay chain
    assert all(len(e.split()) == 1 for e in eqs)
    assert sorted(to_str(e) for e in r.flat_output) == ["x1", "x3"]
