"""Small-scale exact equation solving.

Supported class: equations whose numerators are affine in the targets (jointly,
or one target at a time in some elimination order). Everything else raises.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .expr import ZERO, Expr, Var, diff, irreducible_factors, monomial, numerator, poly_terms, substitute
from .linalg import generic_rank, nullspace, rref


class SolveError(ArithmeticError):
    pass


class UnderdeterminedTargets(SolveError):
    pass


class UnsupportedAlgebraicForm(SolveError):
    def __init__(self, message: str, equation: Expr | None = None):
        self.equation = equation
        super().__init__(message if equation is None else f"{message}: {equation} = 0")


def _affine_split(num: Expr, t: Var):
    """num = c*t + r with c, r free of t, or None."""
    dn, dd = num.degree_in(t)
    if dd or dn != 1:
        return None
    c = diff(num, t)
    if t in c.free_vars():
        return None
    r = substitute(num, {t: ZERO})
    return c, r


def _jointly_affine(nums: Sequence[Expr], targets: Sequence[Var]) -> bool:
    tset = set(targets)
    for n in nums:
        for t in targets:
            dn, dd = n.degree_in(t)
            if dd or dn > 1:
                return False
            if dn and (diff(n, t).free_vars() & tset):
                return False
    return True


def _solve_affine(nums, targets):
    cols = len(targets)
    rows = []
    for n in nums:
        zero = {t: ZERO for t in targets}
        rows.append([diff(n, t) for t in targets] + [-substitute(n, zero)])
    A = [r[:cols] for r in rows]
    if generic_rank(A) < cols:
        raise UnderdeterminedTargets(f"equations do not determine {', '.join(t.display for t in targets)}")
    red, piv = rref(rows, cols + 1, col_order=list(range(cols)))
    sol = {}
    for row, c in zip(red, piv):
        sol[targets[c]] = row[cols]
    return sol


def _nonlinear_parts(num: Expr, targets: set) -> dict:
    """Coefficients of the target monomials of degree >= 2 in ``num``."""
    out: dict = {}
    for powers, c in poly_terms(num):
        tp = tuple(sorted(((v.sort_key, k) for v, k in powers.items() if v in targets)))
        if sum(k for _, k in tp) < 2:
            continue
        rest = monomial({v: k for v, k in powers.items() if v not in targets}, c)
        out[tp] = out.get(tp, ZERO) + rest
    return out


def _combine_away_nonlinear(nums: list, targets: Sequence[Var]) -> list | None:
    """Replace one equation by a combination whose nonlinear target terms cancel."""
    tset = set(targets)
    idx = [i for i, n in enumerate(nums) if n.free_vars() & tset]
    parts = [_nonlinear_parts(nums[i], tset) for i in idx]
    keys = sorted({k for p in parts for k in p})
    if not keys or len(idx) < 2:
        return None
    rows = [[p.get(k, ZERO) for p in parts] for k in keys]
    for lam in nullspace(rows, len(idx)):
        combo = ZERO
        for c, i in zip(lam, idx):
            if not c.is_zero():
                combo = combo + c * nums[i]
        combo = numerator(combo)
        if combo.is_zero() or not (combo.free_vars() & tset):
            continue
        j = max(i for c, i in zip(lam, idx) if not c.is_zero())
        out = list(nums)
        out[j] = combo
        return out
    return None


def _split_on_factor(nums: list, targets: Sequence[Var]) -> list | None:
    """Replace an equation by one of its factors that is affine in some target."""
    tset = set(targets)
    for i, n in enumerate(nums):
        if not (n.free_vars() & tset):
            continue
        facs = irreducible_factors(n)
        if len(facs) < 2:
            continue
        for f in sorted(facs, key=lambda e: e.size()):
            if any(_affine_split(f, t) is not None for t in targets if t in f.free_vars()):
                out = list(nums)
                out[i] = f
                return out
    return None


def _choice_cost(c: Expr, r: Expr, others: set) -> tuple:
    return (
        0 if c.is_constant() else (1 if not (c.free_vars() & others) else 2),
        c.size() + r.size(),
    )


def eliminate(
    equations: Sequence[Expr],
    candidates: Sequence[Var],
    needed: int,
) -> dict[Var, Expr]:
    """Greedy elimination of ``needed`` candidate variables, one affine pair at a time.

    Each step picks an (equation, variable) pair whose numerator is affine in
    the variable, preferring constant coefficients. Returns the solved
    variables in terms of the non-eliminated ones.
    """
    nums = [numerator(e) for e in equations if not e.is_zero()]
    remaining = list(candidates)
    solved: dict[Var, Expr] = {}
    while len(solved) < needed:
        best = None
        rem_set = set(remaining)
        for i, n in enumerate(nums):
            fv = n.free_vars()
            for t in remaining:
                if t not in fv:
                    continue
                split = _affine_split(n, t)
                if split is None:
                    continue
                c, r = split
                cost = _choice_cost(c, r, rem_set - {t})
                if best is None or cost < best[0]:
                    best = (cost, i, t, c, r)
        if best is None:
            combined = _combine_away_nonlinear(nums, remaining)
            if combined is not None and combined != nums:
                nums = combined
                continue
            factored = _split_on_factor(nums, remaining)
            if factored is not None:
                nums = factored
                continue
            bad = next((n for n in nums if n.free_vars() & rem_set), None)
            if bad is None:
                raise UnderdeterminedTargets(
                    f"no equation left to determine {', '.join(t.display for t in remaining)}"
                )
            raise UnsupportedAlgebraicForm("equation is not affine in any remaining target", bad)
        _, i, t, c, r = best
        val = -r / c
        solved = {k: substitute(v, {t: val}) for k, v in solved.items()}
        solved[t] = val
        remaining.remove(t)
        rest = []
        for j, n in enumerate(nums):
            if j == i:
                continue
            m = numerator(substitute(n, {t: val}))
            if not m.is_zero():
                rest.append(m)
        nums = rest
    return solved


def solve_for(equations: Sequence[Expr], targets: Sequence[Var]) -> dict[Var, Expr]:
    """Solve ``equations`` (each meaning expr = 0) for ``targets``.

    Residuals of every equation vanish identically on the returned solution.
    """
    targets = list(targets)
    if len(equations) < len(targets):
        raise UnderdeterminedTargets("fewer equations than targets")
    nums = [numerator(e) for e in equations]
    if _jointly_affine(nums, targets):
        sol = _solve_affine(nums, targets)
    else:
        sol = eliminate(nums, targets, len(targets))
    for e in equations:
        res = substitute(e, sol)
        if not res.is_zero():
            raise UnsupportedAlgebraicForm("system is inconsistent on the solution", e)
    return sol


def check_solution(equations: Sequence[Expr], sol: Mapping[Var, Expr]) -> list[Expr]:
    return [substitute(e, sol) for e in equations]


__all__ = [
    "SolveError",
    "UnderdeterminedTargets",
    "UnsupportedAlgebraicForm",
    "eliminate",
    "solve_for",
    "check_solution",
]
