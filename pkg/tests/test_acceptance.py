"""Acceptance criteria 1-8, one test each.

Each criterion is a plain function returning (passed, detail) so the file can
also be run as a script: ``python tests/test_acceptance.py``.
"""

import time

import pytest

from flatnf.cli import main as cli_main
from flatnf.diffgeo import span_equal
from flatnf.firstint import AnsatzExhausted
from flatnf.flattest import compute_sequences, sequence_checks
from flatnf.invariants import invariant_suite
from flatnf.normalform import (
    build_parameterization,
    compose_forward,
    normal_form,
    triangular_checks,
    triangular_form_from_change,
    verify_parameterization,
)
from flatnf.randsys import RandomSystemConfig, random_flat_system
from flatnf.symkernel import Expr, Var, diff, generic_rank, jacobian, parse, substitute
from flatnf.sysfile import load_system

from conftest import ACCEPTANCE, FIXTURES, span

ROUND_TRIP_SEEDS = range(50)


def _load(name):
    return load_system(FIXTURES / name)


def _same(a, b):
    return (a - b).is_zero()


def _seq_matches(r, expected_xu, expected_plus):
    bad = []
    for label, dists, want in expected_xu + expected_plus:
        got = dists
        if not span_equal(got, span(got.chart, want)):
            bad.append(label)
    return bad


def _pulled_back(tf, block):
    return [compose_forward(Expr.var(v), tf.changes) for v in block]


def _same_sets(got, want):
    """Equal as sets of expressions, order ignored."""
    rest = list(want)
    for g in got:
        hit = next((w for w in rest if _same(g, w)), None)
        if hit is None:
            return False
        rest.remove(hit)
    return not rest


# --- criteria -----------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    sys = _load("s5.sys")
    r = compute_sequences(sys)
    u = [{"u1": "1"}, {"u2": "1"}]
    checks = [
        ("D_0", r.D[0], u),
        ("E_0", r.E[0], u),
        ("D_1", r.D[1], u + [{"x2": "1"}]),
        ("E_1", r.E[1], u + [{"x1": "1"}, {"x2": "1"}]),
        ("D_2", r.D[2], u + [{"x2": "1"}, {"x1": "1"}, {"x3": "1"}]),
        ("E_2", r.E[2], u + [{"x2": "1"}, {"x1": "1"}, {"x3": "1"}]),
    ]
    plus = [
        ("Delta_1", r.Delta[0], [{"x1": "1"}, {"x2": "1"}]),
        ("Delta_2", r.Delta[1], [{"x1": "1"}, {"x2": "1"}, {"x3": "1"}]),
        ("Delta_3", r.Delta[2], [{f"x{i}": "1"} for i in range(1, 6)]),
    ]
    bad = _seq_matches(r, checks, plus)
    strict = not span_equal(r.D[1], r.E[1])
    # the stated flat output, checked through the identity change
    v = {x.name: x for x in sys.xu}
    tf = triangular_form_from_change(
        sys, {x: Expr.var(x) for x in sys.xu},
        [[v["u1"], v["u2"]], [v["x2"]], [v["x1"], v["x3"]]],
        [[v["x1"], v["x2"]], [v["x3"]], [v["x4"], v["x5"]]],
        [v["x4"], v["x5"]],
    )
    tri = all(c.passed for c in triangular_checks(tf))
    param = verify_parameterization(sys, build_parameterization(tf, sys)).ok
    dt = time.perf_counter() - t0
    ok = (not bad and strict and r.delta_dims == (2, 3, 5) and r.flat and not r.sfl and tri and param and dt < 5)
    return ok, f"dims {r.delta_dims}, mismatched {bad}, y=(x4,x5) verified {param}, {dt:.2f}s"


S30_FINAL = {
    "xh3_1": "xr2_2",
    "xh2_1": "uh1*xh3_1 + xh1_1",
    "xr2_2": "uh1*xh3_1 + uh1 + xh1_1",
    "xh1_1": "xh3_1 + u2",
}


def criterion_2():
    t0 = time.perf_counter()
    sys = _load("s30.sys")
    r = compute_sequences(sys)
    u = [{"u1": "1"}, {"u2": "1"}]
    g1 = {"x2": "-3", "x4": "1"}
    g2 = {"x1": "x1/(x3+1)", "x3": "-1"}
    g3 = {"x1": "2*x1/(x3+1)", "x3": "-2", "x4": "-1"}
    xu = [
        ("E_0", r.E[0], u),
        ("D_0", r.D[0], [{"u1": "-2", "u2": "1"}]),
        ("D_1", r.D[1], u + [g1]),
        ("E_1", r.E[1], u + [g1]),
        ("D_2", r.D[2], u + [g1, g2, g3]),
        ("E_2", r.E[2], u + [g1, g2, g3]),
    ]
    plus = [
        ("Delta_1", r.Delta[0], [g1]),
        ("Delta_2", r.Delta[1], [g1, g2, g3]),
        ("Delta_3", r.Delta[2], [{f"x{i}": "1"} for i in range(1, 5)]),
    ]
    bad = _seq_matches(r, xu, plus)

    nf = normal_form(sys, r)
    first, *rest = nf.changes
    ledger_ok = first.kind == "state" and all(c.structure_preserving for c in rest)
    ledger_ok &= all(c.is_invertible() for c in nf.changes)
    final_ok = all(c.passed for c in invariant_suite(sys, r, nf.final))

    # a known complete transformation and flat output, checked as a fixture
    X = lambda n: Var(n, "state")
    a, b, c, d = X("xh3_1"), X("xh2_1"), X("xr2_2"), X("xh1_1")
    uh, u2 = Var("uh1", "input"), sys.inputs[1]
    P = lambda t: parse(t, sys.xu)
    fw = {a: P("x1*(x3+1)"), b: P("x2+3*x4"), c: P("x3+x2+3*x4"), d: P("x4"), uh: P("u1+2*u2"), u2: P("u2")}
    given = triangular_form_from_change(sys, fw, [[u2], [d, uh], [b, c]], [[d], [b, c], [a]], [a, b])
    names = list(given.system.xu)
    eq_ok = all(_same(given.system.rhs(s), parse(S30_FINAL[s.name], names)) for s in given.system.states)
    p = build_parameterization(given, sys)
    flat_ok = _same(p.flat_output[0], P("x1*(x3+1)")) and _same(p.flat_output[1], P("x2+3*x4"))
    given_ok = all(ch.passed for ch in invariant_suite(sys, None, given, p))
    dt = time.perf_counter() - t0
    ok = not bad and r.delta_dims == (1, 3, 4) and ledger_ok and final_ok and eq_ok and flat_ok and given_ok and dt < 10
    return ok, (f"dims {r.delta_dims}, mismatched {bad}, ledger {ledger_ok}, final form {final_ok}, "
                f"known change: equations {eq_ok} flat output {flat_ok} checks {given_ok}, {dt:.2f}s")


def criterion_3():
    sys = _load("s30.sys")
    nf = normal_form(sys)
    steps = nf.dstraight.steps
    cases = [s.case for s in steps]
    s0 = steps[0]
    P = lambda t: parse(t, sys.xu)
    # span-equivalent: the integral is a function of u1 + 2*u2 alone
    integral_ok = s0.integral is not None and generic_rank(jacobian([s0.integral, P("u1+2*u2")], sys.xu)) == 1
    tf = nf.triangular
    want = [[P("u2")], [P("x4"), P("u1+2*u2")], [P("x3"), P("x2+3*x4")]]
    z_ok = all(_same_sets(_pulled_back(tf, blk), w) for blk, w in zip(tf.zpart.blocks, want))
    ok = cases == ["b", "a", "a"] and integral_ok and z_ok and len(tf.zpart.blocks) == 3
    return ok, f"cases {cases}, step 0 integral ok {integral_ok}, z-partition ok {z_ok}"


def criterion_4():
    sys = _load("s30.sys")
    nf = normal_form(sys)
    tf, final = nf.triangular, nf.final
    zp = tf.zpart
    flagged = [k for k in range(2, tf.kbar + 1) if len(zp.xhat_blocks[k - 1]) == 1 and len(zp.blocks[k - 1]) == 2]
    elim = [c for c in final.changes if c.label == "eliminate redundant input"]
    P = lambda t: parse(t, sys.xu)
    ok = final.redundancy_eliminated and len(flagged) == 1 and len(elim) == 1
    if ok:
        (new, expr), = elim[0].forward.items()
        z1, z2 = zp.blocks[flagged[0] - 1]
        sum_ok = _same(expr, Expr.var(z1) + Expr.var(z2))
        pulled = compose_forward(Expr.var(new), final.changes)
        sum_ok &= _same(pulled, P("x3 + x2 + 3*x4"))
        (_, fk), = final.subsystem(flagged[0])
        kept = [v for v in final.zpart.blocks[flagged[0] - 1] if v != new]
        indep = all(diff(fk, v).is_zero() for v in kept)
        ranks = all(c.passed for c in triangular_checks(final))
        ok = sum_ok and indep and ranks
        return ok, f"flagged level {flagged}, new {new.name} = {expr}, independent {indep}, ranks {ranks}"
    return False, f"flagged {flagged}, eliminations {len(elim)}"


def criterion_5():
    sys = _load("brunovsky.sys")
    nf = normal_form(sys)
    r = nf.seq
    same_E = all(span_equal(d, e) for d, e in zip(r.D, r.E))
    # every final coordinate pulls back to one original coordinate
    back = {v: compose_forward(Expr.var(v), nf.changes) for v in nf.final.system.xu}
    renaming = all(len(e.free_vars()) == 1 and _same(e, Expr.var(next(iter(e.free_vars())))) for e in back.values())
    identical = False
    if renaming:
        rn = {v: e for v, e in back.items()}
        orig = dict(zip(sys.states, sys.f))
        identical = all(
            _same(substitute(f, rn), orig[next(iter(back[s].free_vars()))])
            for s, f in zip(nf.final.system.states, nf.final.system.f)
        )
    ok = same_E and r.sfl and identical
    return ok, f"D_k = E_k {same_E}, sfl {r.sfl}, identical up to renaming {identical}"


def criterion_6():
    r = compute_sequences(_load("decoupled.sys"))
    ok = not r.flat and r.delta_dims[-1] == 2
    return ok, f"flat {r.flat}, dims {r.delta_dims}"


def _round_trip(seed, cfg, max_degree):
    gen = random_flat_system(seed, cfg)
    seq = compute_sequences(gen.system)
    if not seq.flat:
        return False
    nf = normal_form(gen.system, seq, max_degree)
    return verify_parameterization(gen.system, build_parameterization(nf.final, gen.system)).ok


def _round_trip_batch(cfg):
    passed, exhausted, failed = 0, [], []
    for seed in ROUND_TRIP_SEEDS:
        try:
            if _round_trip(seed, cfg, 3):
                passed += 1
            else:
                failed.append(seed)
        except AnsatzExhausted:
            exhausted.append(seed)
        except Exception as exc:
            failed.append((seed, type(exc).__name__))
    rescued = [s for s in exhausted if _round_trip(s, cfg, 4)]
    n = len(ROUND_TRIP_SEEDS)
    # at most two ansatz failures, each of which must go through at degree 4
    ok = len(exhausted) <= 2 and rescued == exhausted and passed + len(rescued) >= n - 2
    return ok, f"{passed}/{n} at default degree, exhausted {exhausted}, failed {failed}"


def criterion_7():
    # scrambles restricted to structure-preserving changes, then with extra cross-level linear mixing
    t0 = time.perf_counter()
    strict_ok, strict = _round_trip_batch(RandomSystemConfig(linear_mixing=False))
    mixed_ok, mixed = _round_trip_batch(RandomSystemConfig(linear_mixing=True))
    dt = time.perf_counter() - t0
    ok = strict_ok and mixed_ok and dt < 300
    return ok, f"structure preserving: {strict}; mixed: {mixed}; {dt:.1f}s"


def criterion_8():
    import contextlib
    import io

    def verify(path):
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            return cli_main(["verify", str(path)])

    good = ["s5.sys", "s30.sys", "brunovsky.sys", "decoupled.sys", "identity.sys", "three_input.sys", "s30_report.json"]
    codes = {name: verify(FIXTURES / name) for name in good}
    broken = verify(FIXTURES / "s30_broken_ledger.json")
    # the named invariant families are all present in the suite
    sys = _load("s30.sys")
    names = [c.name for c in sequence_checks(sys, compute_sequences(sys))]
    families = ["nested D", "nested Delta", "f_*(D_", "dim E_", "involutive", "(flat)", "in {1,2}"]
    covered = all(any(f in n for n in names) for f in families)
    ok = all(c == 0 for c in codes.values()) and broken == 1 and covered
    return ok, f"exit codes {codes}, edited ledger exit {broken}, families covered {covered}"


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 9)}


def _record(k):
    ok, detail = CRITERIA[k]()
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return ok, detail


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6, 8])
def test_criterion(k):
    ok, detail = _record(k)
    assert ok, detail


@pytest.mark.slow
def test_criterion_7_round_trip():
    ok, detail = _record(7)
    assert ok, detail


if __name__ == "__main__":
    results = [_record(k)[0] for k in CRITERIA]
    raise SystemExit(0 if all(results) else 1)
