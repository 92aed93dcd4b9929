"""Matrices over the rational-function field: elimination, rank, nullspace."""

from __future__ import annotations

import contextvars
import logging
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .expr import ZERO, Expr, Var, evaluate

log = logging.getLogger(__name__)


class EvaluationSingularity(ArithmeticError):
    pass


@dataclass(frozen=True)
class RankConfig:
    seed: int = 0
    trials: int = 5


_rank_config: contextvars.ContextVar[RankConfig] = contextvars.ContextVar("rank_config", default=RankConfig())


def rank_config() -> RankConfig:
    return _rank_config.get()


def set_rank_config(seed: int = 0, trials: int = 5):
    """Set the sampling seed/trials for randomized rank cross-checks; returns a reset token."""
    return _rank_config.set(RankConfig(seed, trials))


def reset_rank_config(token) -> None:
    _rank_config.reset(token)


class SymMatrix:
    """Rectangular grid of Expr entries."""

    __slots__ = ("rows", "nrows", "ncols")

    def __init__(self, rows: Sequence[Sequence], ncols: int | None = None):
        self.rows = [[Expr.coerce(x) for x in r] for r in rows]
        self.nrows = len(self.rows)
        self.ncols = len(self.rows[0]) if self.rows else (ncols or 0)
        if any(len(r) != self.ncols for r in self.rows):
            raise ValueError("ragged matrix")

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def transpose(self) -> "SymMatrix":
        return SymMatrix([[self.rows[i][j] for i in range(self.nrows)] for j in range(self.ncols)], self.nrows)

    def free_vars(self) -> frozenset:
        out = set()
        for r in self.rows:
            for x in r:
                out |= x.free_vars()
        return frozenset(out)

    def __repr__(self):
        return f"SymMatrix({[[str(x) for x in r] for r in self.rows]})"


def jacobian(funcs: Sequence[Expr], wrt: Sequence[Var]) -> SymMatrix:
    from .expr import diff

    return SymMatrix([[diff(f, v) for v in wrt] for f in funcs], len(wrt))


def _pivot_cost(e: Expr) -> tuple:
    return (0 if e.is_constant() else 1, e.total_degree(), e.size())


def rref(rows: Sequence[Sequence[Expr]], ncols: int, col_order: Sequence[int] | None = None):
    """Reduced row echelon form over the function field.

    Pivot rows are chosen per column preferring constant entries, then lowest
    total degree (ties by row order). Returns (nonzero rows, pivot columns).
    """
    m = [list(r) for r in rows]
    order = list(col_order) if col_order is not None else list(range(ncols))
    pivots: list[int] = []
    r = 0
    for c in order:
        if r >= len(m):
            break
        best, best_cost = None, None
        for i in range(r, len(m)):
            x = m[i][c]
            if not x.is_zero():
                cost = _pivot_cost(x)
                if best is None or cost < best_cost:
                    best, best_cost = i, cost
        if best is None:
            continue
        m[r], m[best] = m[best], m[r]
        piv = m[r][c]
        if not (piv.is_constant() and piv.constant_value() == 1):
            inv = piv.inverse()
            m[r] = [x if x.is_zero() else x * inv for x in m[r]]
        for i in range(len(m)):
            if i == r:
                continue
            f = m[i][c]
            if f.is_zero():
                continue
            row_r = m[r]
            m[i] = [a if b.is_zero() else a - f * b for a, b in zip(m[i], row_r)]
        pivots.append(c)
        r += 1
    return m[:r], pivots


def symbolic_rank(rows: Sequence[Sequence[Expr]], ncols: int) -> int:
    """Rank by exact fraction-field elimination (row echelon only)."""
    m = [list(x) for x in rows]
    r = 0
    for c in range(ncols):
        if r >= len(m):
            break
        best, best_cost = None, None
        for i in range(r, len(m)):
            x = m[i][c]
            if not x.is_zero():
                cost = _pivot_cost(x)
                if best is None or cost < best_cost:
                    best, best_cost = i, cost
        if best is None:
            continue
        m[r], m[best] = m[best], m[r]
        inv = m[r][c].inverse()
        for i in range(r + 1, len(m)):
            f = m[i][c]
            if f.is_zero():
                continue
            f = f * inv
            m[i] = [a if b.is_zero() else a - f * b for a, b in zip(m[i], m[r])]
        r += 1
    return r


def nullspace(rows: Sequence[Sequence[Expr]], ncols: int) -> list[list[Expr]]:
    """Basis of {v : M v = 0}; one vector per free column, with a 1 there."""
    red, piv = rref(rows, ncols)
    free = [c for c in range(ncols) if c not in piv]
    basis = []
    for fc in free:
        v = [ZERO] * ncols
        v[fc] = Expr.const(1)
        for row, pc in zip(red, piv):
            if not row[fc].is_zero():
                v[pc] = -row[fc]
        basis.append(v)
    return basis


def random_point(variables, rng: random.Random) -> dict[Var, Fraction]:
    pt = {}
    for v in sorted(variables, key=lambda v: v.sort_key):
        num = rng.randint(-997, 997)
        den = 0
        while den == 0:
            den = rng.randint(-997, 997)
        pt[v] = Fraction(num, den)
    return pt


def rational_rank(rows: list[list[Fraction]]) -> int:
    m = [list(r) for r in rows]
    if not m:
        return 0
    ncols = len(m[0])
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if p is None:
            continue
        m[r], m[p] = m[p], m[r]
        for i in range(r + 1, len(m)):
            if m[i][c] != 0:
                f = m[i][c] / m[r][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        r += 1
        if r == len(m):
            break
    return r


def evaluate_matrix(M: SymMatrix, point) -> list[list[Fraction]]:
    return [[evaluate(x, point) for x in r] for r in M.rows]


def sampled_rank(M: SymMatrix, seed: int, trials: int) -> int:
    """Max over seeded random rational points of the exact rank at the point."""
    vars_ = M.free_vars()
    rng = random.Random(seed)
    best = 0
    for _ in range(trials):
        for _attempt in range(20):
            pt = random_point(vars_, rng)
            try:
                vals = evaluate_matrix(M, pt)
                break
            except ZeroDivisionError:
                continue
        else:
            raise EvaluationSingularity("could not avoid poles while sampling")
        best = max(best, rational_rank(vals))
        if best == min(M.nrows, M.ncols):
            break
    return best


def generic_rank(M: SymMatrix | Sequence[Sequence[Expr]], seed: int | None = None, trials: int | None = None) -> int:
    """Rank over the rational-function field.

    A full rank at a sampled point proves full generic rank, so that case
    returns early; otherwise exact symbolic elimination decides.
    """
    if not isinstance(M, SymMatrix):
        M = SymMatrix(M)
    if M.nrows == 0 or M.ncols == 0:
        return 0
    cfg = rank_config()
    seed = cfg.seed if seed is None else seed
    trials = cfg.trials if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be >= 1")
    full = min(M.nrows, M.ncols)
    try:
        sampled = sampled_rank(M, seed, trials)
    except EvaluationSingularity:
        sampled = -1
    if sampled == full:
        return full
    exact = symbolic_rank(M.rows, M.ncols)
    if sampled > exact:
        # cannot happen for exact arithmetic; symbolic value is authoritative
        log.warning("sampled rank %d exceeds symbolic rank %d", sampled, exact)
    return exact
