"""First integrals by undetermined coefficients.

A first integral of fields v_1..v_r is a non-constant Phi with v_t(Phi) = 0.
We look for Phi as a polynomial of bounded total degree (optionally over a
fixed denominator), which turns v_t(Phi) = 0 into a linear system over Q.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Iterable, Sequence

import flint

from .diffgeo import VectorField
from .symkernel import ONE, ZERO, Expr, Var, diff, irreducible_factors, poly_terms, to_str
from .symkernel.expr import _common


class AnsatzExhausted(ArithmeticError):
    def __init__(self, max_degree: int, message: str = ""):
        self.max_degree = max_degree
        super().__init__(message or f"no first integral found up to degree {max_degree}; try a larger --max-degree")


def monomials(variables: Sequence[Var], degree: int, include_constant: bool = False) -> list[Expr]:
    """All monomials of total degree 1..degree (and 1 if asked), low degree first."""
    vs = sorted(variables, key=lambda v: v.sort_key)
    out = [ONE] if include_constant else []
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(vs, d):
            e = ONE
            for v in combo:
                e = e * Expr.var(v)
            out.append(e)
    return out


def _coefficient_rows(cols: Sequence[Expr]) -> list[list[int]]:
    """Rows of the linear map c -> numerator of sum c_i cols_i, one per monomial."""
    den = None
    for c in cols:
        if c.is_zero():
            continue
        if den is None:
            den = c.den
        else:
            a, b = _common(den, c.den)
            den = (a * b) // a.gcd(b)
    nums = []
    for c in cols:
        if c.is_zero():
            nums.append({})
            continue
        a, b = _common(den, c.den)
        n, s = _common(c.num, a // b)
        e = Expr(n * s)
        nums.append({tuple(sorted((v.sort_key, k) for v, k in p.items())): k for p, k in poly_terms(e)})
    monos = sorted({m for d in nums for m in d})
    return [[d.get(mo, 0) for d in nums] for mo in monos]


def solve_linear_identity(*blocks: Sequence[Expr]) -> list[list[Fraction]]:
    """Basis of rational c with sum_i c_i * block[i] identically zero for every block.

    Each basis vector has a 1 in one free column; earlier columns are used
    as pivots first, so later columns end up free.
    """
    blocks = [[Expr.coerce(c) for c in blk] for blk in blocks]
    ncols = len(blocks[0]) if blocks else 0
    if not ncols:
        return []
    rows = [r for blk in blocks for r in _coefficient_rows(blk)]
    if not rows:
        return [[Fraction(int(i == j)) for j in range(ncols)] for i in range(ncols)]
    M = flint.fmpq_mat(len(rows), ncols, [x for r in rows for x in r])
    R, rank = M.rref()
    pivots = []
    for i in range(rank):
        for j in range(ncols):
            if R[i, j] != 0:
                pivots.append(j)
                break
    free = [j for j in range(ncols) if j not in pivots]
    basis = []
    for fc in free:
        vec = [Fraction(0)] * ncols
        vec[fc] = Fraction(1)
        for i, pc in enumerate(pivots):
            x = R[i, fc]
            if x != 0:
                vec[pc] = -Fraction(int(x.p), int(x.q))
        basis.append(vec)
    return basis


def tidy(phi: Expr) -> Expr:
    """Scale away rational content and fix the sign of the leading printed term."""
    if phi.is_zero():
        return phi
    if phi.den.is_constant():
        p = phi.num
        content = p.content() if hasattr(p, "content") else None
        e = Expr(p, None)
        if content is not None and int(content) > 1:
            e = e / int(content)
    else:
        e = phi
    s = to_str(e)
    if s.startswith("-"):
        e = -e
    return e


def _support(fields: Sequence[VectorField]) -> set[Var]:
    out = set()
    for v in fields:
        for c, a in v.coeffs.items():
            out.add(c)
            out |= a.free_vars()
    return out


def integral_space(
    fields: Sequence[VectorField],
    variables: Sequence[Var],
    degree: int,
    denominator: Expr = ONE,
) -> list[Expr]:
    """Basis of first integrals P/denominator, P of total degree <= degree in ``variables``."""
    monos = monomials(variables, degree)
    if not monos:
        return []
    cand = [m / denominator for m in monos]
    sols = solve_linear_identity(*[[w(c) for c in cand] for w in fields])
    out = []
    for vec in sols:
        phi = ZERO
        for c, m in zip(vec, cand):
            if c:
                phi = phi + Expr.const(c) * m
        if not phi.is_constant():
            out.append(tidy(phi))
    return out


def _preference(phi: Expr, target: Var | None = None) -> tuple:
    affine = 0
    if target is not None:
        dn, dd = phi.degree_in(target)
        affine = 0 if (dn == 1 and dd == 0) else 1
    single = 0 if (phi.den.is_constant() and len(phi.free_vars()) == 1 and phi.total_degree() == 1) else 1
    return (affine, single, phi.total_degree(), phi.size(), to_str(phi))


def _denominator_candidates(fields: Sequence[VectorField], allowed: set[Var]) -> list[Expr]:
    facs = []
    seen = set()
    for v in fields:
        for a in v.coeffs.values():
            for f in irreducible_factors(a):
                if f.free_vars() <= allowed and f not in seen:
                    seen.add(f)
                    facs.append(f)
    out = list(facs)
    for a, b in itertools.combinations_with_replacement(facs, 2):
        out.append(a * b)
    return out


def first_integral(
    v: VectorField | Sequence[VectorField],
    fixed: Iterable[Var],
    target: Var,
    max_degree: int = 3,
) -> Expr:
    """Phi with v(Phi) = 0, depending on ``target`` and free of the ``fixed`` coordinates.

    Affine dependence on the target is preferred, so the replacement
    coordinate can be inverted explicitly.
    """
    fields = [v] if isinstance(v, VectorField) else list(v)
    fixed = set(fixed)
    chart = fields[0].chart
    allowed = set(chart.coords) - fixed
    if target not in allowed:
        raise ValueError(f"target {target} is fixed or not on the chart")
    for w in fields:
        for c, a in w.coeffs.items():
            if a.free_vars() & fixed:
                raise ValueError(f"coefficient of d_{c} depends on fixed coordinates")
    variables = sorted(_support(fields) & allowed | {target}, key=lambda x: x.sort_key)
    for d in range(1, max_degree + 1):
        found = [p for p in integral_space(fields, variables, d) if not diff(p, target).is_zero()]
        if found:
            return min(found, key=lambda p: _preference(p, target))
    for q in _denominator_candidates(fields, allowed):
        for d in range(1, max_degree + 1):
            found = [
                p for p in integral_space(fields, variables, d, q) if not diff(p, target).is_zero()
            ]
            if found:
                return min(found, key=lambda p: _preference(p, target))
    raise AnsatzExhausted(max_degree)


def joint_first_integrals(
    fields: Sequence[VectorField],
    variables: Sequence[Var],
    max_degree: int = 3,
) -> list[Expr]:
    """Candidate first integrals of all fields, grouped by increasing degree, simplest first."""
    out: list[Expr] = []
    seen = set()
    for d in range(1, max_degree + 1):
        batch = integral_space(fields, variables, d) if fields else [Expr.var(x) for x in variables]
        for p in sorted(batch, key=_preference):
            if p not in seen:
                seen.add(p)
                out.append(p)
        if not fields:
            break
    return out


def rational_first_integrals(fields: Sequence[VectorField], variables: Sequence[Var], max_degree: int = 3) -> list[Expr]:
    out = []
    allowed = set(variables)
    for q in _denominator_candidates(fields, allowed):
        for d in range(1, max_degree + 1):
            out.extend(integral_space(fields, variables, d, q))
    return out
