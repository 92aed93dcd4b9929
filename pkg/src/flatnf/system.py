"""The discrete-time system x+ = f(x, u)."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

from .symkernel import Expr, SymMatrix, Var, generic_rank, jacobian, substitute, to_str


class RankDeficientSystem(ValueError):
    """The system violates a standing rank assumption."""

    def __init__(self, message: str, jacobian: SymMatrix | None = None):
        self.jacobian = jacobian
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    states: tuple[Var, ...]
    inputs: tuple[Var, ...]
    f: tuple[Expr, ...]
    name: str = "system"
    working_point: Mapping[Var, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.f) != len(self.states):
            raise ValueError("one update equation per state is required")
        allv = list(self.states) + list(self.inputs)
        if len(set(allv)) != len(allv):
            raise ValueError("state and input names must be distinct")
        for v in self.states:
            if v.kind != "state":
                raise ValueError(f"{v} is not a state variable")
        for v in self.inputs:
            if v.kind != "input":
                raise ValueError(f"{v} is not an input variable")
        known = set(allv)
        for s, fi in zip(self.states, self.f):
            extra = fi.free_vars() - known
            if extra:
                raise ValueError(f"equation for {s} uses undeclared {sorted(extra)}")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def m(self) -> int:
        return len(self.inputs)

    @property
    def xu(self) -> tuple[Var, ...]:
        return self.states + self.inputs

    @property
    def xplus(self) -> tuple[Var, ...]:
        return tuple(v.plus() for v in self.states)

    def rhs(self, s: Var) -> Expr:
        return self.f[self.states.index(s)]

    @cached_property
    def jac_xu(self) -> SymMatrix:
        return jacobian(self.f, self.xu)

    @cached_property
    def jac_u(self) -> SymMatrix:
        return jacobian(self.f, self.inputs)

    def check_rank_assumptions(self) -> None:
        if generic_rank(self.jac_xu) != self.n:
            raise RankDeficientSystem("Rank of the Jacobian w.r.t. (x, u) is below n", self.jac_xu)
        if generic_rank(self.jac_u) != self.m:
            raise RankDeficientSystem("Rank of the Jacobian w.r.t. u is below m (redundant inputs)", self.jac_u)

    def compose_plus(self, e: Expr) -> Expr:
        """Pull a function of x+ back to (x, u) through f."""
        return substitute(e, {p: fi for p, fi in zip(self.xplus, self.f)})

    def to_plus(self, e: Expr) -> Expr:
        """Rename states to shifted states (the map pi)."""
        return substitute(e, {s: Expr.var(s.plus()) for s in self.states})

    def from_plus(self, e: Expr) -> Expr:
        return substitute(e, {s.plus(): Expr.var(s) for s in self.states})

    def equations(self) -> list[str]:
        return [f"{s.display}+ = {to_str(fi)}" for s, fi in zip(self.states, self.f)]

    def __repr__(self):
        return f"DiscreteSystem({self.name!r}, n={self.n}, m={self.m})"


def make_system(
    states: Sequence[str | Var],
    inputs: Sequence[str | Var],
    equations: Mapping[str, str] | Sequence[str],
    name: str = "system",
    working_point: Mapping[str, object] | None = None,
) -> DiscreteSystem:
    """Convenience constructor from strings in the expression grammar."""
    from .symkernel import parse

    xs = tuple(v if isinstance(v, Var) else Var(v, "state") for v in states)
    us = tuple(v if isinstance(v, Var) else Var(v, "input") for v in inputs)
    declared = list(xs) + list(us)
    if isinstance(equations, Mapping):
        f = tuple(parse(equations[s.name], declared) for s in xs)
    else:
        f = tuple(parse(t, declared) for t in equations)
    wp = {}
    for k, v in (working_point or {}).items():
        var = next(d for d in declared if d.name == k)
        wp[var] = Fraction(v)
    return DiscreteSystem(xs, us, f, name, wp)
