"""Recursive-descent parser for the expression grammar.

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | base ('^' ['-'] integer)?
    base   := identifier | integer | '(' expr ')'

``parse_tree`` returns the raw tree (Sum / Prod / Pow / Num / Sym nodes);
``parse`` folds it into a canonical :class:`Expr`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Union

from .expr import Expr, Var


class ParseError(ValueError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at position {pos}")


class UndeclaredIdentifier(ParseError):
    def __init__(self, name: str, pos: int, text: str = ""):
        self.name = name
        super().__init__(f"undeclared identifier {name!r}", pos, text)


@dataclass(frozen=True)
class Num:
    value: Fraction


@dataclass(frozen=True)
class Sym:
    var: Var


@dataclass(frozen=True)
class Sum:
    terms: tuple


@dataclass(frozen=True)
class Prod:
    factors: tuple


@dataclass(frozen=True)
class Pow:
    base: object
    exp: int


Node = Union[Num, Sym, Sum, Prod, Pow]


def _tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            yield ("int", text[i:j], i)
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            yield ("id", text[i:j], i)
            i = j
        elif c in "+-*/^()":
            yield (c, c, i)
            i += 1
        else:
            raise ParseError(f"unexpected character {c!r}", i, text)
    yield ("end", "", n)


class _Parser:
    def __init__(self, text: str, names: dict[str, Var]):
        self.text = text
        self.names = names
        self.toks = list(_tokenize(text))
        self.k = 0

    @property
    def tok(self):
        return self.toks[self.k]

    def take(self, kind=None):
        t = self.toks[self.k]
        if kind is not None and t[0] != kind:
            what = "end of input" if t[0] == "end" else repr(t[1])
            raise ParseError(f"expected {kind!r}, found {what}", t[2], self.text)
        self.k += 1
        return t

    def expr(self):
        terms = [self.term()]
        while self.tok[0] in ("+", "-"):
            op = self.take()[0]
            t = self.term()
            terms.append(t if op == "+" else Prod((Num(Fraction(-1)), t)))
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def term(self):
        factors = [self.factor()]
        while self.tok[0] in ("*", "/"):
            op = self.take()[0]
            f = self.factor()
            factors.append(f if op == "*" else Pow(f, -1))
        return factors[0] if len(factors) == 1 else Prod(tuple(factors))

    def factor(self):
        if self.tok[0] == "-":
            self.take()
            return Prod((Num(Fraction(-1)), self.factor()))
        b = self.base()
        if self.tok[0] == "^":
            self.take()
            neg = False
            if self.tok[0] == "-":
                self.take()
                neg = True
            k = int(self.take("int")[1])
            return Pow(b, -k if neg else k)
        return b

    def base(self):
        kind, val, pos = self.tok
        if kind == "int":
            self.take()
            return Num(Fraction(int(val)))
        if kind == "id":
            self.take()
            v = self.names.get(val)
            if v is None:
                raise UndeclaredIdentifier(val, pos, self.text)
            return Sym(v)
        if kind == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", pos, self.text)


def _names(declared: Iterable[Var] | dict) -> dict[str, Var]:
    if isinstance(declared, dict):
        return dict(declared)
    out = {}
    for v in declared:
        if v.display in out and out[v.display] != v:
            raise ValueError(f"identifier {v.display!r} declared twice")
        out[v.display] = v
    return out


def parse_tree(text: str, declared) -> Node:
    p = _Parser(text, _names(declared))
    tree = p.expr()
    if p.tok[0] != "end":
        raise ParseError(f"unexpected {p.tok[1]!r}", p.tok[2], text)
    return tree


def fold(node: Node) -> Expr:
    if isinstance(node, Num):
        return Expr.const(node.value)
    if isinstance(node, Sym):
        return Expr.var(node.var)
    if isinstance(node, Sum):
        acc = Expr.const(0)
        for t in node.terms:
            acc = acc + fold(t)
        return acc
    if isinstance(node, Prod):
        acc = Expr.const(1)
        for f in node.factors:
            acc = acc * fold(f)
        return acc
    if isinstance(node, Pow):
        return fold(node.base) ** node.exp
    raise TypeError(f"not an expression node: {node!r}")


def parse(text: str, declared) -> Expr:
    """Parse ``text`` over the declared variables into a canonical Expr."""
    return fold(parse_tree(text, declared))
