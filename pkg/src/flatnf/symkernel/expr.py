"""Variables and exact rational-function expressions.

An :class:`Expr` is always stored in canonical form: a pair of integer
polynomials ``num/den`` (python-flint ``fmpz_mpoly``) with ``gcd(num, den) = 1``
and a positive leading coefficient in ``den``.  Two expressions are equal iff
they denote the same rational function, which gives a complete zero test.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

import flint
from flint import fmpq, fmpz_mpoly_ctx

KINDS = ("state", "input", "shifted-state", "flat-output")
_KIND_RANK = {k: i for i, k in enumerate(KINDS)}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _natural_key(name: str) -> tuple:
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name) if p)


@dataclass(frozen=True)
class Var:
    """A named variable: state, input, shifted state (x+) or flat-output shift."""

    name: str
    kind: str = "state"
    shift: int = 0

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise ValueError(f"invalid identifier {self.name!r}")
        if self.kind not in _KIND_RANK:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind in ("state", "input") and self.shift != 0:
            raise ValueError("states and inputs carry shift 0")
        if self.kind == "shifted-state" and self.shift != 1:
            raise ValueError("shifted states carry shift 1")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")

    @property
    def display(self) -> str:
        if self.kind == "shifted-state":
            return f"{self.name}_p"
        if self.kind == "flat-output":
            return f"{self.name}_s{self.shift}"
        return self.name

    @property
    def sort_key(self) -> tuple:
        return (_KIND_RANK[self.kind], _natural_key(self.name), self.shift)

    def plus(self) -> "Var":
        if self.kind != "state":
            raise ValueError(f"only states have a shifted copy, got {self}")
        return Var(self.name, "shifted-state", 1)

    def minus(self) -> "Var":
        if self.kind != "shifted-state":
            raise ValueError(f"not a shifted state: {self}")
        return Var(self.name, "state", 0)

    def shifted(self, k: int = 1) -> "Var":
        if self.kind != "flat-output":
            raise ValueError("only flat-output variables are shifted arbitrarily")
        return Var(self.name, "flat-output", self.shift + k)

    def __repr__(self):
        return self.display

    def __lt__(self, other: "Var"):
        return self.sort_key < other.sort_key


def state(name: str) -> Var:
    return Var(name, "state")


def inp(name: str) -> Var:
    return Var(name, "input")


def yvar(j: int, shift: int = 0, base: str = "y") -> Var:
    return Var(f"{base}{j}", "flat-output", shift)


# --- variable registry -----------------------------------------------------
# Every Var gets a global index; polynomials live in a lex context over
# generators v0..v{N-1}. Contexts grow in chunks, and polynomials from a smaller
# context are lifted on demand (appended generators keep the monomial order).

_CHUNK = 16
_registry: dict[Var, int] = {}
_by_index: list[Var] = []
_lock = threading.Lock()


def _index(v: Var) -> int:
    i = _registry.get(v)
    if i is None:
        with _lock:
            i = _registry.get(v)
            if i is None:
                i = len(_by_index)
                _by_index.append(v)
                _registry[v] = i
    return i


@lru_cache(maxsize=None)
def _ctx(size: int) -> fmpz_mpoly_ctx:
    return fmpz_mpoly_ctx.get(tuple(f"v{i}" for i in range(size)), "lex")


def _ctx_for(n_vars: int) -> fmpz_mpoly_ctx:
    size = max(_CHUNK, -(-n_vars // _CHUNK) * _CHUNK)
    return _ctx(size)


def _lift(p, ctx):
    return p if p.context() is ctx else p.project_to_context(ctx)


def _common(a, b):
    ca, cb = a.context(), b.context()
    if ca is cb:
        return a, b
    if ca.nvars() < cb.nvars():
        return a.project_to_context(cb), b
    return a, b.project_to_context(ca)


class Expr:
    """Canonical rational function with integer-polynomial numerator/denominator."""

    __slots__ = ("num", "den", "_hash")

    def __init__(self, num, den=None, _canonical=False):
        if den is None:
            den = num.context().constant(1)
        if not _canonical:
            num, den = _common(num, den)
            if den.is_zero():
                raise ZeroDivisionError("rational function with zero denominator")
            if num.is_zero():
                den = den.context().constant(1)
            elif not den.is_constant() or den != 1:
                g = num.gcd(den)
                if not g.is_one():
                    num = num // g
                    den = den // g
                if den.leading_coefficient() < 0:
                    num, den = -num, -den
        self.num = num
        self.den = den
        self._hash = None

    # constructors
    @staticmethod
    def const(value) -> "Expr":
        q = Fraction(value)
        ctx = _ctx_for(0)
        return Expr(ctx.constant(q.numerator), ctx.constant(q.denominator))

    @staticmethod
    def var(v: Var) -> "Expr":
        i = _index(v)
        ctx = _ctx_for(i + 1)
        return Expr(ctx.gen(i), ctx.constant(1), _canonical=True)

    @staticmethod
    def coerce(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, Var):
            return Expr.var(x)
        if isinstance(x, (int, Fraction)):
            return Expr.const(x)
        raise TypeError(f"cannot convert {type(x).__name__} to Expr")

    # predicates
    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_constant(self) -> bool:
        return self.num.is_constant() and self.den.is_constant()

    def is_polynomial(self) -> bool:
        return self.den.is_constant()

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ValueError(f"{self} is not constant")
        n = int(self.num.coefficient(0)) if not self.num.is_zero() else 0
        return Fraction(n, int(self.den.coefficient(0)))

    def free_vars(self) -> frozenset:
        out = set()
        for p in (self.num, self.den):
            for i, d in enumerate(p.degrees()):
                if d > 0:
                    out.add(_by_index[i])
        return frozenset(out)

    def degree_in(self, v: Var) -> tuple[int, int]:
        """(degree of numerator, degree of denominator) in ``v``."""
        i = _registry.get(v)
        if i is None or i >= self.num.context().nvars():
            return 0, 0
        return max(self.num.degrees()[i], 0), max(self.den.degrees()[i], 0)

    def total_degree(self) -> int:
        return max(self.num.total_degree(), 0) + max(self.den.total_degree(), 0)

    def size(self) -> int:
        return len(self.num) + len(self.den)

    # arithmetic
    def __add__(self, other):
        o = Expr.coerce(other)
        if self.den.is_one() and o.den.is_one():
            a, b = _common(self.num, o.num)
            return Expr(a + b, None, _canonical=False)
        n1, d1 = self.num, self.den
        n2, d2 = o.num, o.den
        n1, n2 = _common(n1, n2)
        d1, d2 = _common(d1, d2)
        n1, d2 = _common(n1, d2)
        n2, d1 = _common(n2, d1)
        if d1 == d2:
            return Expr(n1 + n2, d1)
        return Expr(n1 * d2 + n2 * d1, d1 * d2)

    __radd__ = __add__

    def __neg__(self):
        return Expr(-self.num, self.den, _canonical=True)

    def __sub__(self, other):
        return self + (-Expr.coerce(other))

    def __rsub__(self, other):
        return Expr.coerce(other) - self

    def __mul__(self, other):
        o = Expr.coerce(other)
        if self.den.is_one() and o.den.is_one():
            a, b = _common(self.num, o.num)
            return Expr(a * b, None, _canonical=False)
        # cross-cancel before multiplying to keep the gcds small
        n1, d2 = _common(self.num, o.den)
        n2, d1 = _common(o.num, self.den)
        g1 = n1.gcd(d2)
        g2 = n2.gcd(d1)
        n1, d2 = n1 // g1, d2 // g1
        n2, d1 = n2 // g2, d1 // g2
        a, b = _common(n1, n2)
        c, d = _common(d1, d2)
        num, den = _common(a * b, c * d)
        if num.is_zero():
            return Expr(num, None)
        if den.leading_coefficient() < 0:
            num, den = -num, -den
        return Expr(num, den, _canonical=True)

    __rmul__ = __mul__

    def inverse(self) -> "Expr":
        if self.num.is_zero():
            raise ZeroDivisionError("division by the zero expression")
        return Expr(self.den, self.num)

    def __truediv__(self, other):
        return self * Expr.coerce(other).inverse()

    def __rtruediv__(self, other):
        return Expr.coerce(other) * self.inverse()

    def __pow__(self, k: int):
        if not isinstance(k, int):
            raise TypeError("only integer exponents are supported")
        if k < 0:
            return self.inverse() ** (-k)
        return Expr(self.num**k, self.den**k, _canonical=True)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Expr.const(other)
        if not isinstance(other, Expr):
            return NotImplemented
        a, b = _common(self.num, other.num)
        if a != b:
            return False
        c, d = _common(self.den, other.den)
        return c == d

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((_poly_key(self.num), _poly_key(self.den)))
        return self._hash

    def __repr__(self):
        return f"Expr({to_str(self)!r})"

    def __str__(self):
        return to_str(self)


def _poly_key(p) -> tuple:
    # context-independent: strip trailing zero exponents
    items = []
    for exps, c in p.to_dict().items():
        e = list(exps)
        while e and e[-1] == 0:
            e.pop()
        items.append((tuple(e), int(c)))
    return tuple(sorted(items))


ZERO = Expr.const(0)
ONE = Expr.const(1)


# --- core operations ---------------------------------------------------------


def diff(e: Expr, v: Var) -> Expr:
    """Partial derivative of ``e`` with respect to ``v``."""
    i = _registry.get(v)
    if i is None:
        return ZERO
    n, d = e.num, e.den
    if i >= n.context().nvars() and i >= d.context().nvars():
        return ZERO
    if i >= n.context().nvars() or i >= d.context().nvars():
        n, d = _common(n, d)
        ctx = _ctx_for(i + 1)
        if n.context().nvars() < ctx.nvars():
            n, d = n.project_to_context(ctx), d.project_to_context(ctx)
    dn = n.derivative(i)
    if d.is_constant():
        return Expr(dn, d)
    dd = d.derivative(i)
    if dd.is_zero():
        return Expr(dn, d)
    # (n/d)' = (n' d - n d') / d^2, reduce by the squarefree-safe route
    return Expr(dn * d - n * dd, d * d)


def _poly_subs(p, images: dict, dens: dict):
    """Substitute index->(num poly) with per-index denominators.

    Returns (numerator, denominator) polynomials of p(images/dens).
    """
    ctx = p.context()
    touched = [i for i, d in enumerate(p.degrees()) if d > 0 and i in images]
    if not touched:
        return p, ctx.constant(1)
    if all(dens[i].is_one() for i in touched):
        target = max([ctx] + [images[i].context() for i in touched], key=lambda c: c.nvars())
        pl = _lift(p, target)
        gens = list(target.gens())
        for i in touched:
            gens[i] = _lift(images[i], target)
        return pl.compose(*gens), target.constant(1)
    degs = p.degrees()
    target = max(
        [ctx] + [images[i].context() for i in touched] + [dens[i].context() for i in touched],
        key=lambda c: c.nvars(),
    )
    num_img = {i: _lift(images[i], target) for i in touched}
    den_img = {i: _lift(dens[i], target) for i in touched}
    pow_cache: dict = {}

    def pw(kind, i, k):
        key = (kind, i, k)
        r = pow_cache.get(key)
        if r is None:
            base = num_img[i] if kind == 0 else den_img[i]
            r = base**k
            pow_cache[key] = r
        return r

    total = target.constant(0)
    nv = target.nvars()
    for exps, c in p.to_dict().items():
        rest = [0] * nv
        term = target.constant(int(c))
        for i, k in enumerate(exps):
            if not k:
                continue
            if i in num_img:
                continue
            rest[i] = k
        term = term * target.from_dict({tuple(rest): 1})
        for i in touched:
            k = exps[i]
            if k:
                term = term * pw(0, i, k)
            if degs[i] - k:
                term = term * pw(1, i, degs[i] - k)
        total = total + term
    den = target.constant(1)
    for i in touched:
        den = den * pw(1, i, degs[i])
    return total, den


def substitute(e: Expr, bindings: Mapping[Var, object]) -> Expr:
    """Simultaneous substitution of variables by expressions."""
    images, dens = {}, {}
    for v, g in bindings.items():
        i = _registry.get(v)
        if i is None:
            continue
        g = Expr.coerce(g)
        images[i] = g.num
        dens[i] = g.den
    if not images:
        return e
    n1, d1 = _poly_subs(e.num, images, dens)
    n2, d2 = _poly_subs(e.den, images, dens)
    a, b = _common(n1, d2)
    c, d = _common(n2, d1)
    return Expr(*_common(a * b, c * d))


def normalize(e) -> Expr:
    """Canonical form. Expressions are stored normalized; trees are folded."""
    if isinstance(e, Expr):
        return e
    from .parse import fold

    return fold(e)


def evaluate(e: Expr, point: Mapping[Var, Fraction]) -> Fraction:
    """Exact value at a rational point; raises ZeroDivisionError at a pole."""
    num = _eval_poly(e.num, point)
    den = _eval_poly(e.den, point)
    if den == 0:
        raise ZeroDivisionError("pole")
    return Fraction(num) / Fraction(den)


def _eval_poly(p, point) -> Fraction:
    if p.is_constant():
        return Fraction(int(p.coefficient(0))) if not p.is_zero() else Fraction(0)
    ctx = p.context()
    qctx = flint.fmpq_mpoly_ctx.get(ctx.names(), "lex")
    vals = []
    for i, d in enumerate(p.degrees()):
        if d > 0:
            v = _by_index[i]
            if v not in point:
                raise KeyError(f"no value for {v.display}")
            x = Fraction(point[v])
            vals.append(fmpq(x.numerator, x.denominator))
        else:
            vals.append(fmpq(0))
    r = qctx.from_dict(p.to_dict())(*vals)
    return Fraction(int(r.p), int(r.q))


def numerator(e: Expr) -> Expr:
    return Expr(e.num, None, _canonical=True)


def denominator(e: Expr) -> Expr:
    return Expr(e.den, None, _canonical=True)


def poly_terms(e: Expr) -> list[tuple[dict, int]]:
    """Numerator terms as ({Var: exponent}, integer coefficient)."""
    out = []
    for exps, c in e.num.to_dict().items():
        out.append(({_by_index[i]: int(k) for i, k in enumerate(exps) if k}, int(c)))
    return out


def monomial(powers: Mapping[Var, int], coeff=1) -> Expr:
    r = Expr.const(coeff)
    for v, k in powers.items():
        r = r * Expr.var(v) ** k
    return r


def irreducible_factors(e: Expr) -> list[Expr]:
    """Non-constant irreducible factors of numerator and denominator."""
    out = []
    for p in (e.num, e.den):
        if p.is_constant():
            continue
        _, facs = p.factor()
        for f, _k in facs:
            out.append(Expr(f, None))
    return out


# --- printing ------------------------------------------------------------------


def _mono_str(powers: list[tuple[Var, int]]) -> str:
    parts = []
    for v, k in powers:
        parts.append(v.display if k == 1 else f"{v.display}^{k}")
    return "*".join(parts)


def _sorted_terms(p) -> list[tuple[list[tuple[Var, int]], int]]:
    terms = []
    for exps, c in p.to_dict().items():
        powers = sorted(((_by_index[i], k) for i, k in enumerate(exps) if k), key=lambda t: t[0].sort_key)
        terms.append((powers, int(c)))
    terms.sort(key=lambda t: (-sum(k for _, k in t[0]), [(v.sort_key, -k) for v, k in t[0]]))
    return terms


def _poly_str(terms) -> str:
    if not terms:
        return "0"
    out = []
    for n, (powers, c) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        a = abs(c)
        body = _mono_str(powers)
        if not body:
            s = str(a)
        elif a == 1:
            s = body
        else:
            s = f"{a}*{body}"
        if n == 0:
            out.append(s if sign == "+" else "-" + s)
        else:
            out.append(f" {sign} {s}")
    return "".join(out)


def to_str(e: Expr) -> str:
    """Deterministic rendering in the input grammar (independent of registry order)."""
    nt = _sorted_terms(e.num)
    dt = _sorted_terms(e.den)
    if dt and dt[0][1] < 0:
        nt = [(p, -c) for p, c in nt]
        dt = [(p, -c) for p, c in dt]
    ns = _poly_str(nt)
    if len(dt) == 1 and not dt[0][0] and dt[0][1] == 1:
        return ns
    ds = _poly_str(dt)
    if len(nt) > 1:
        ns = f"({ns})"
    if len(dt) > 1 or (dt[0][0] and dt[0][1] != 1) or (len(dt[0][0]) > 1):
        ds = f"({ds})"
    return f"{ns}/{ds}"


def as_vars(items: Iterable) -> list[Var]:
    return [v if isinstance(v, Var) else Var(v) for v in items]
