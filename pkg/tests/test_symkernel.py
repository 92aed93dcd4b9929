from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from flatnf.symkernel import (
    Expr,
    ParseError,
    UndeclaredIdentifier,
    UnderdeterminedTargets,
    diff,
    evaluate,
    generic_rank,
    inp,
    irreducible_factors,
    nullspace,
    parse,
    solve_for,
    state,
    substitute,
    to_str,
)
from flatnf.symkernel.solve import check_solution

x1, x2, x3 = state("x1"), state("x2"), state("x3")
u1 = inp("u1")
VARS = [x1, x2, x3, u1]


def P(text):
    return parse(text, VARS)


def test_canonical_form_cancels():
    assert (P("(x1^2 - 1)/(x1 - 1)") - P("x1 + 1")).is_zero()
    assert to_str(P("x1*(x3+1)")) == "x1*x3 + x1"


def test_printed_form_parses_back():
    e = P("(x2 + x3 + 3*x4)/(u1 + 1)".replace("x4", "x1"))
    assert (parse(to_str(e), VARS) - e).is_zero()


def test_unary_minus_and_powers():
    assert (P("-x1^2") + P("x1*x1")).is_zero()
    assert P("2^-1").constant_value() == Fraction(1, 2)


def test_undeclared_name_reports_position():
    with pytest.raises(UndeclaredIdentifier) as info:
        P("x1 + y7")
    assert info.value.pos == 5


def test_malformed_input():
    with pytest.raises(ParseError):
        P("x1 + * x2")


def test_quotient_rule():
    e = P("x1/(x2+1)")
    assert (diff(e, x2) + P("x1/(x2+1)^2")).is_zero()


def test_factors():
    fs = irreducible_factors(P("(x1+1)*(x2-x3)"))
    assert len(fs) == 2


def test_solve_triangular_pair():
    sol = solve_for([P("x1 - x2*u1 - 1"), P("x2 - x3 - 2")], [x1, x2])
    assert (sol[x1] - P("(x3+2)*u1 + 1")).is_zero()


def test_solve_needs_enough_equations():
    with pytest.raises(UnderdeterminedTargets):
        solve_for([P("x1 + x2")], [x1, x2])


def test_nullspace_annihilates():
    rows = [[P("x1"), P("1"), P("0")], [P("0"), P("x2"), P("1")]]
    (v,) = nullspace(rows, 3)
    for r in rows:
        assert sum((a * b for a, b in zip(r, v)), Expr.const(0)).is_zero()


# --- properties -----------------------------------------------------------------

small = st.integers(-3, 3)


@st.composite
def polys(draw, max_terms=4):
    e = Expr.const(draw(small))
    for _ in range(draw(st.integers(0, max_terms))):
        t = Expr.const(draw(small))
        for v in VARS[:3]:
            t = t * Expr.var(v) ** draw(st.integers(0, 2))
        e = e + t
    return e


points = st.fixed_dictionaries({v: st.integers(-5, 5).map(Fraction) for v in VARS})


@settings(max_examples=40, deadline=None)
@given(polys(), polys(), points)
def test_product_rule_at_points(a, b, pt):
    lhs = diff(a * b, x1)
    rhs = diff(a, x1) * b + a * diff(b, x1)
    assert evaluate(lhs - rhs, pt) == 0


@settings(max_examples=40, deadline=None)
@given(polys(), polys())
def test_chain_rule_through_substitution(a, g):
    # d/dx1 a(g, x2, x3) = a_x1(g, x2, x3) * g_x1
    comp = substitute(a, {x1: g})
    lhs = diff(comp, x1) if x1 in g.free_vars() else Expr.const(0)
    rhs = substitute(diff(a, x1), {x1: g}) * diff(g, x1)
    assert (lhs - rhs).is_zero()


@settings(max_examples=30, deadline=None)
@given(polys(), points)
def test_derivative_matches_difference_quotient(a, pt):
    # x1 appears at most squared, so the central difference is exact
    h = Fraction(1, 10**6)
    up = dict(pt)
    dn = dict(pt)
    up[x1] += h
    dn[x1] -= h
    approx = (evaluate(a, up) - evaluate(a, dn)) / (2 * h)
    exact = evaluate(diff(a, x1), pt)
    assert abs(float(approx - exact)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(polys(), polys(), polys())
def test_solve_residuals_vanish(a, b, c):
    # x1 = a(x3), x2 = b + c*x1 is always solvable
    a = substitute(a, {x1: Expr.const(0), x2: Expr.const(0)})
    b = substitute(b, {x1: Expr.const(0), x2: Expr.const(0)})
    c = substitute(c, {x1: Expr.const(0), x2: Expr.const(0)})
    eqs = [Expr.var(x1) - a, Expr.var(x2) - b - c * Expr.var(x1)]
    sol = solve_for(eqs, [x1, x2])
    assert all(r.is_zero() for r in check_solution(eqs, sol))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(-2, 2), min_size=4, max_size=4), min_size=1, max_size=4))
def test_rank_agrees_with_numpy(rows):
    sym = [[Expr.const(v) for v in r] for r in rows]
    assert generic_rank(sym) == np.linalg.matrix_rank(np.array(rows, dtype=float))


@settings(max_examples=25, deadline=None)
@given(polys(), polys())
def test_rank_of_scaled_rows(a, b):
    assume(not a.is_zero())
    rows = [[a, b], [a * Expr.var(x3), b * Expr.var(x3)]]
    assert generic_rank(rows) == 1
