"""Vector fields, one-forms and distributions on X x U and X+.

The projectability machinery here is what the flatness test is built on: the
kernel distribution of f, pushforwards, expressing functions through f, and the
largest projectable subdistribution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

from .symkernel import (
    ZERO,
    Expr,
    UnderdeterminedTargets,
    UnsupportedAlgebraicForm,
    Var,
    diff,
    eliminate,
    generic_rank,
    nullspace,
    rref,
    substitute,
    to_str,
)
from .symkernel.expr import _common
from .symkernel.linalg import symbolic_rank

log = logging.getLogger(__name__)


class ChartMismatch(ValueError):
    pass


class NotProjectable(ValueError):
    def __init__(self, component: Var | None, message: str = ""):
        self.component = component
        super().__init__(message or f"pushforward component for {component} is not a function of x+")


class NotInImage(ValueError):
    """The differential test failed: dg is not in span{df}."""


class ExpressionConstructionFailed(ArithmeticError):
    """dg lies in span{df}, but no explicit G with G o f = g could be built."""


class FixpointFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class Chart:
    coords: tuple[Var, ...]
    tag: str = "custom"

    def __post_init__(self):
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("chart coordinates must be distinct")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def index(self, v: Var) -> int:
        return self.coords.index(v)


def xu_chart(states: Sequence[Var], inputs: Sequence[Var]) -> Chart:
    return Chart(tuple(states) + tuple(inputs), "XU")


def xplus_chart(states: Sequence[Var]) -> Chart:
    return Chart(tuple(s.plus() for s in states), "Xplus")


class VectorField:
    """sum_i coeff[v_i] * d/dv_i on a chart; missing coefficients are zero."""

    __slots__ = ("chart", "coeffs")

    def __init__(self, chart: Chart, coeffs: Mapping[Var, object]):
        cs = {}
        for v, c in coeffs.items():
            if v not in chart.coords:
                raise ChartMismatch(f"{v} is not a coordinate of the chart")
            c = Expr.coerce(c)
            if not c.is_zero():
                cs[v] = c
        self.chart = chart
        self.coeffs = cs

    @staticmethod
    def from_row(chart: Chart, row: Sequence[Expr]) -> "VectorField":
        return VectorField(chart, dict(zip(chart.coords, row)))

    @staticmethod
    def coordinate(chart: Chart, v: Var) -> "VectorField":
        return VectorField(chart, {v: 1})

    def row(self) -> list[Expr]:
        return [self.coeffs.get(v, ZERO) for v in self.chart.coords]

    def __call__(self, g: Expr) -> Expr:
        acc = ZERO
        for v, c in self.coeffs.items():
            d = diff(g, v)
            if not d.is_zero():
                acc = acc + c * d
        return acc

    def __add__(self, other: "VectorField") -> "VectorField":
        _same_chart(self, other)
        keys = set(self.coeffs) | set(other.coeffs)
        return VectorField(self.chart, {k: self.coeffs.get(k, ZERO) + other.coeffs.get(k, ZERO) for k in keys})

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, a) -> "VectorField":
        a = Expr.coerce(a)
        return VectorField(self.chart, {k: c * a for k, c in self.coeffs.items()})

    def is_zero(self) -> bool:
        return not self.coeffs

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.chart == other.chart and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.chart, frozenset(self.coeffs.items())))

    def __repr__(self):
        return "VectorField(" + format_field(self) + ")"


def format_field(v: VectorField) -> str:
    if not v.coeffs:
        return "0"
    parts = []
    for c in v.chart.coords:
        if c in v.coeffs:
            parts.append(f"({to_str(v.coeffs[c])})*d_{c.display}")
    return " + ".join(parts)


def _same_chart(a, b):
    if a.chart != b.chart:
        raise ChartMismatch("objects live on different charts")


def lie_bracket(v: VectorField, w: VectorField) -> VectorField:
    """[v, w]^i = v(w^i) - w(v^i)."""
    _same_chart(v, w)
    out = {}
    for c in v.chart.coords:
        val = v(w.coeffs.get(c, ZERO)) - w(v.coeffs.get(c, ZERO))
        if not val.is_zero():
            out[c] = val
    return VectorField(v.chart, out)


def _independent_rows(rows: list[list[Expr]], ncols: int) -> list[int]:
    """Indices of a maximal independent prefix-greedy subset of rows."""
    keep: list[int] = []
    for i, r in enumerate(rows):
        if all(x.is_zero() for x in r):
            continue
        trial = [rows[k] for k in keep] + [r]
        if generic_rank(trial) == len(trial):
            keep.append(i)
        if len(keep) == ncols:
            break
    return keep


class Distribution:
    """Span of vector fields on one chart; redundant generators are pruned."""

    def __init__(self, chart: Chart, generators: Iterable[VectorField] = (), _independent=False):
        gens = list(generators)
        for g in gens:
            if g.chart != chart:
                raise ChartMismatch("generator chart differs from distribution chart")
        if not _independent:
            rows = [g.row() for g in gens]
            gens = [gens[i] for i in _independent_rows(rows, chart.dim)]
        self.chart = chart
        self.generators = tuple(gens)

    @property
    def dim(self) -> int:
        return len(self.generators)

    def rows(self) -> list[list[Expr]]:
        return [g.row() for g in self.generators]

    def contains(self, v: VectorField) -> bool:
        _same_chart(self, v)
        if v.is_zero():
            return True
        if self.dim == self.chart.dim:
            return True
        return generic_rank(self.rows() + [v.row()]) == self.dim

    def contains_all(self, other: "Distribution") -> bool:
        _same_chart(self, other)
        if other.dim == 0:
            return True
        return generic_rank(self.rows() + other.rows()) == self.dim

    def echelon(self) -> "Distribution":
        red, _ = rref(self.rows(), self.chart.dim)
        return Distribution(self.chart, [VectorField.from_row(self.chart, r) for r in red], _independent=True)

    @staticmethod
    def coordinate(chart: Chart, vars_: Iterable[Var]) -> "Distribution":
        return Distribution(chart, [VectorField.coordinate(chart, v) for v in vars_], _independent=True)

    @staticmethod
    def full(chart: Chart) -> "Distribution":
        return Distribution.coordinate(chart, chart.coords)

    def __add__(self, other: "Distribution") -> "Distribution":
        _same_chart(self, other)
        return Distribution(self.chart, list(self.generators) + list(other.generators))

    def __repr__(self):
        return "Span{" + ", ".join(format_field(g) for g in self.generators) + "}"


def span_equal(a: Distribution, b: Distribution) -> bool:
    _same_chart(a, b)
    return a.dim == b.dim and b.contains_all(a)


class Codistribution:
    """Span of one-forms (each a coefficient map over the chart coordinates)."""

    def __init__(self, chart: Chart, forms: Iterable[Mapping[Var, Expr]] = ()):
        rows = []
        for w in forms:
            for k in w:
                if k not in chart.coords:
                    raise ChartMismatch(f"{k} is not a coordinate of the chart")
            rows.append([Expr.coerce(w.get(c, ZERO)) for c in chart.coords])
        red, _ = rref(rows, chart.dim) if rows else ([], [])
        self.chart = chart
        self.rows = red

    @property
    def dim(self) -> int:
        return len(self.rows)

    def forms(self) -> list[dict[Var, Expr]]:
        return [{c: x for c, x in zip(self.chart.coords, r) if not x.is_zero()} for r in self.rows]

    def annihilated(self) -> Distribution:
        """The distribution of vectors on which all forms vanish."""
        basis = nullspace(self.rows, self.chart.dim) if self.rows else [
            [Expr.const(int(i == j)) for j in range(self.chart.dim)] for i in range(self.chart.dim)
        ]
        return Distribution(self.chart, [VectorField.from_row(self.chart, r) for r in basis], _independent=True)


def annihilator(d: Distribution) -> Codistribution:
    if d.dim == 0:
        forms = [{c: Expr.const(1)} for c in d.chart.coords]
        return Codistribution(d.chart, forms)
    basis = nullspace(d.rows(), d.chart.dim)
    return Codistribution(d.chart, [dict(zip(d.chart.coords, r)) for r in basis])


def _clear_denominators(values: Sequence[Expr]) -> list[Expr]:
    """The same ratios as polynomials: scale by the lcm of denominators and drop common content."""
    nz = [v for v in values if not v.is_zero()]
    if not nz:
        return list(values)
    lcm = nz[0].den
    for v in nz[1:]:
        a, b = _common(lcm, v.den)
        lcm = a * (b // a.gcd(b))
    scale = Expr(lcm)
    polys = [v * scale for v in values]
    g = None
    for v in polys:
        if v.is_zero():
            continue
        if g is None:
            g = v.num
        else:
            a, b = _common(g, v.num)
            g = a.gcd(b)
    if g is not None and not g.is_constant():
        polys = [v / Expr(g) for v in polys]
    return polys


def _polynomial_form(form: Mapping[Var, Expr]) -> dict[Var, Expr]:
    keys = list(form)
    return dict(zip(keys, _clear_denominators([form[k] for k in keys])))


def _polynomial_field(v: "VectorField") -> "VectorField":
    keys = list(v.coeffs)
    return VectorField(v.chart, dict(zip(keys, _clear_denominators([v.coeffs[k] for k in keys]))))


def lie_derivative_form(w: VectorField, form: Mapping[Var, Expr]) -> dict[Var, Expr]:
    """(L_w omega)_i = w(omega_i) + sum_j omega_j d_i w^j."""
    out = {}
    for c in w.chart.coords:
        val = w(form.get(c, ZERO))
        for cj, oj in form.items():
            wj = w.coeffs.get(cj)
            if wj is not None:
                d = diff(wj, c)
                if not d.is_zero():
                    val = val + oj * d
        if not val.is_zero():
            out[c] = val
    return out


def is_involutive(d: Distribution) -> tuple[bool, VectorField | None]:
    """Returns (True, None) or (False, offending bracket)."""
    gens = d.generators
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            br = lie_bracket(gens[i], gens[j])
            if not d.contains(br):
                return False, br
    return True, None


# --- the system map f --------------------------------------------------------


def kernel_distribution(sys) -> Distribution:
    """Vertical distribution of f on X x U (dimension m)."""
    chart = xu_chart(sys.states, sys.inputs)
    J = sys.jac_xu
    if generic_rank(J) != sys.n:
        from .system import RankDeficientSystem

        raise RankDeficientSystem("Rank of the Jacobian w.r.t. (x, u) is below n", J)
    basis = nullspace(J.rows, chart.dim)
    return Distribution(chart, [VectorField.from_row(chart, r) for r in basis], _independent=True)


@lru_cache(maxsize=256)
def _kernel_cached(sys) -> Distribution:
    return kernel_distribution(sys)


def in_image_differential(sys, g: Expr) -> bool:
    """dg in span{df^1..df^n} over X x U."""
    if g.is_constant():
        return True
    K = _kernel_cached(sys)
    return all(k(g).is_zero() for k in K.generators)


def _fix_values(sys) -> list:
    wp = dict(sys.working_point)
    return [wp, {}]


@lru_cache(maxsize=256)
def inverse_chart(sys) -> tuple[tuple[Var, Expr], ...]:
    """Local section of f: n of the (x, u) variables in terms of x+ and the rest.

    Built by greedy affine elimination on x+ - f(x, u) = 0; when no affine
    pair remains, free variables (at most m) are pinned to constants.
    """
    eqs = [Expr.var(p) - fi for p, fi in zip(sys.xplus, sys.f)]
    cands = list(sys.xu)
    try:
        sol = eliminate(eqs, cands, sys.n)
        return tuple(sol.items())
    except (UnsupportedAlgebraicForm, UnderdeterminedTargets, ZeroDivisionError):
        pass
    # pin free variables to constants, at most m of them
    import itertools

    order = list(sys.inputs) + list(reversed(sys.states))
    for r in range(1, sys.m + 1):
        for pinned in itertools.combinations(order, r):
            for vals in ({v: sys.working_point.get(v, 0) for v in pinned}, {v: 1 for v in pinned}):
                sub_eqs = [substitute(e, {v: Expr.coerce(c) for v, c in vals.items()}) for e in eqs]
                rest = [c for c in cands if c not in pinned]
                try:
                    sol = eliminate(sub_eqs, rest, sys.n)
                except (UnsupportedAlgebraicForm, UnderdeterminedTargets, ZeroDivisionError):
                    continue
                jac_ok = True
                sol.update({v: Expr.coerce(c) for v, c in vals.items()})
                if jac_ok:
                    return tuple(sol.items())
    return ()


def express_in_image(sys, g: Expr) -> Expr:
    """G in the x+ variables with G o f = g.

    Raises NotInImage when the differential test fails and
    ExpressionConstructionFailed when it passes but no G could be built.
    """
    g = Expr.coerce(g)
    if g.is_constant():
        return g
    if not in_image_differential(sys, g):
        raise NotInImage(f"{g} is not a function of x+ through f")
    chart = dict(inverse_chart(sys))
    xplus = set(sys.xplus)
    if chart:
        G = substitute(g, chart)
        leftover = G.free_vars() - xplus
        if leftover:
            G = substitute(G, {v: Expr.coerce(sys.working_point.get(v, 0)) for v in leftover})
        if not (G.free_vars() - xplus) and sys.compose_plus(G) == g:
            return G
    G = _image_ansatz(sys, g)
    if G is not None:
        return G
    raise ExpressionConstructionFailed(f"could not express {g} in x+")


def _image_ansatz(sys, g: Expr, max_degree: int = 2) -> Expr | None:
    """Fallback: G = P/Q with P, Q polynomials in x+ of bounded degree."""
    from .firstint import monomials, solve_linear_identity

    xp = list(sys.xplus)
    for d in range(1, max_degree + 1):
        monos = monomials(xp, d, include_constant=True)
        composed = [sys.compose_plus(m) for m in monos]
        # P(f) - g * Q(f) = 0, unknowns: coefficients of P then Q
        columns = composed + [-(g * c) for c in composed]
        sols = solve_linear_identity(columns)
        for vec in sols:
            P = sum((c * m for c, m in zip(vec[: len(monos)], monos)), ZERO)
            Q = sum((c * m for c, m in zip(vec[len(monos):], monos)), ZERO)
            if Q.is_zero():
                continue
            G = P / Q
            if sys.compose_plus(G) == g:
                return G
    return None


def pushforward(sys, v: VectorField) -> VectorField:
    """f_* v as a field on X+, or NotProjectable naming the failing component."""
    chart = xplus_chart(sys.states)
    out = {}
    for s, fi in zip(sys.states, sys.f):
        gi = v(fi)
        try:
            out[s.plus()] = express_in_image(sys, gi)
        except NotInImage as exc:
            raise NotProjectable(s, f"component {s.display}: {exc}") from exc
    return VectorField(chart, out)


def pushforward_rows(sys, d: Distribution) -> list[list[Expr]]:
    return [[g(fi) for fi in sys.f] for g in d.generators]


def pushforward_distribution(sys, d: Distribution) -> Distribution:
    """f_*(D): the reduced echelon basis of the image rows must live on X+."""
    chart = xplus_chart(sys.states)
    rows = pushforward_rows(sys, d)
    if not rows:
        return Distribution(chart, [], _independent=True)
    red, _ = rref(rows, sys.n)
    gens = []
    for r in red:
        coeffs = {}
        for s, x in zip(sys.states, r):
            if x.is_zero():
                continue
            try:
                coeffs[s.plus()] = express_in_image(sys, x)
            except NotInImage as exc:
                raise NotProjectable(s, f"component {s.display}: {exc}") from exc
        gens.append(VectorField(chart, coeffs))
    return Distribution(chart, gens, _independent=True)


def is_projectable(sys, d: Distribution) -> bool:
    """Independent check: the echelon image rows pass the differential test."""
    rows = pushforward_rows(sys, d)
    if not rows:
        return True
    red, _ = rref(rows, sys.n)
    return all(in_image_differential(sys, x) for r in red for x in r)


@dataclass
class ProjectableResult:
    D: Distribution
    pushforward: Distribution
    involutive: bool
    audit: list = field(default_factory=list)


def largest_projectable_subdistribution(sys, E: Distribution, audit: bool = True) -> ProjectableResult:
    """Largest D in E whose pushforward under f is a well-defined distribution.

    D + K must be invariant under the kernel K of f. Starting from the
    annihilator of E + K, close it under Lie derivatives along K; the
    annihilated distribution C is the largest K-invariant one in E + K, and
    D = C intersect E.
    """
    K = _kernel_cached(sys)
    chart = E.chart
    # rescaling forms and kernel fields keeps every span involved, and keeps the algebra polynomial
    kfields = [_polynomial_field(w) for w in K.generators]
    omega = annihilator(E + K)
    ann_E = annihilator(E)
    log_entries = []
    dims = []
    while True:
        forms = [_polynomial_form(f) for f in omega.forms()]
        new = list(forms)
        for w in kfields:
            for f in forms:
                new.append(lie_derivative_form(w, f))
        grown = Codistribution(chart, new)
        dims.append(chart.dim - omega.dim)
        if grown.dim == omega.dim:
            break
        omega = grown
    both = Codistribution(chart, omega.forms() + ann_E.forms())
    D = both.annihilated()
    if audit:
        # every intermediate candidate that is strictly larger must fail projectability
        cand_omega = annihilator(E + K)
        while True:
            cand = Codistribution(chart, cand_omega.forms() + ann_E.forms()).annihilated()
            if cand.dim <= D.dim:
                break
            log_entries.append({"candidate_dim": cand.dim, "projectable": is_projectable(sys, cand)})
            forms = [_polynomial_form(f) for f in cand_omega.forms()]
            new = list(forms)
            for w in kfields:
                for f in forms:
                    new.append(lie_derivative_form(w, f))
            cand_omega = Codistribution(chart, new)
    try:
        pushed = pushforward_distribution(sys, D)
    except (NotProjectable, ExpressionConstructionFailed) as exc:
        raise FixpointFailure(f"fixpoint result failed pushforward verification: {exc}") from exc
    invol, _ = is_involutive(D)
    return ProjectableResult(D, pushed, invol, log_entries)


def preimage_under_pi(delta: Distribution, states: Sequence[Var], inputs: Sequence[Var]) -> Distribution:
    """E = pi_*^{-1}(Delta): rename x+ -> x and adjoin all input directions."""
    chart = xu_chart(states, inputs)
    ren = {s.plus(): Expr.var(s) for s in states}
    gens = [VectorField.coordinate(chart, u) for u in inputs]
    for g in delta.generators:
        gens.append(VectorField(chart, {c.minus(): substitute(x, ren) for c, x in g.coeffs.items()}))
    return Distribution(chart, gens, _independent=True)


def distribution_rank(rows, ncols) -> int:
    return symbolic_rank(rows, ncols)
