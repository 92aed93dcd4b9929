"""Reading and writing system files.

Line-oriented format::

    system s30
    states: x1, x2, x3, x4
    inputs: u1, u2
    equilibrium: x1=0, x3=0      # optional
    x1+ = x1*(x3+1) + ...

``#`` starts a comment. JSON with the same fields is accepted as well.
"""

from __future__ import annotations

import json
import re
from fractions import Fraction
from pathlib import Path

from .symkernel import ParseError, Var, parse, to_str
from .system import DiscreteSystem


class SystemFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, path: str = ""):
        self.line = line
        self.column = column
        where = path
        if line is not None:
            where = f"{path or 'line'}:{line}" + (f":{column}" if column is not None else "")
        super().__init__(f"{where}: {message}" if where else message)


class DuplicateEquation(SystemFileError):
    pass


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")
_EQ = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\+\s*=(.*)$")


def _names(text: str, lineno: int, path: str) -> list[str]:
    out = [t.strip() for t in text.split(",") if t.strip()]
    for t in out:
        if not _IDENT.match(t):
            raise SystemFileError(f"bad identifier {t!r}", lineno, None, path)
    return out


def parse_system_text(text: str, path: str = "") -> DiscreteSystem:
    name = None
    states: list[str] = []
    inputs: list[str] = []
    eq_point: dict[str, str] = {}
    eqs: dict[str, tuple[str, int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        m = _EQ.match(line)
        if m:
            lhs, rhs = m.group(1), m.group(2)
            if lhs in eqs:
                raise DuplicateEquation(f"second equation for {lhs}+", lineno, line.index(lhs) + 1, path)
            eqs[lhs] = (rhs, lineno, m.start(2) + 1)
        elif stripped.startswith("system"):
            name = stripped[len("system"):].strip() or "system"
        elif stripped.startswith("states:"):
            states = _names(stripped[len("states:"):], lineno, path)
        elif stripped.startswith("inputs:"):
            inputs = _names(stripped[len("inputs:"):], lineno, path)
        elif stripped.startswith("equilibrium:"):
            for item in stripped[len("equilibrium:"):].split(","):
                if not item.strip():
                    continue
                if "=" not in item:
                    raise SystemFileError(f"expected name=value, got {item.strip()!r}", lineno, None, path)
                k, v = item.split("=", 1)
                eq_point[k.strip()] = v.strip()
        else:
            raise SystemFileError(f"unrecognized line {stripped!r}", lineno, 1, path)
    return _build(name or Path(path).stem or "system", states, inputs, eqs, eq_point, path)


def _build(name, states, inputs, eqs, eq_point, path) -> DiscreteSystem:
    if not states:
        raise SystemFileError("no states declared", path=path)
    if not inputs:
        raise SystemFileError("no inputs declared", path=path)
    dup = {n for n in states + inputs if (states + inputs).count(n) > 1}
    if dup:
        raise SystemFileError(f"declared twice: {sorted(dup)}", path=path)
    xs = [Var(s, "state") for s in states]
    us = [Var(u, "input") for u in inputs]
    declared = xs + us
    for lhs, (_, lineno, _) in eqs.items():
        if lhs not in states:
            raise SystemFileError(f"equation for undeclared state {lhs}", lineno, 1, path)
    f = []
    for s in states:
        if s not in eqs:
            raise SystemFileError(f"missing equation for {s}+", path=path)
        rhs, lineno, col = eqs[s]
        try:
            f.append(parse(rhs, declared))
        except ParseError as exc:
            raise SystemFileError(str(exc).split(" at position")[0], lineno, col + exc.pos, path) from exc
    wp = {}
    for k, v in eq_point.items():
        var = next((d for d in declared if d.name == k), None)
        if var is None:
            raise SystemFileError(f"equilibrium uses undeclared {k}", path=path)
        try:
            wp[var] = Fraction(v)
        except ValueError as exc:
            raise SystemFileError(f"equilibrium value for {k} is not a rational number: {v!r}", path=path) from exc
    return DiscreteSystem(tuple(xs), tuple(us), tuple(f), name, wp)


def system_from_json(data: dict, path: str = "") -> DiscreteSystem:
    eqs = data.get("equations", {})
    if isinstance(eqs, list):
        eqs = dict(zip(data["states"], eqs))
    eqs = {k: (v, None, 1) for k, v in eqs.items()}
    return _build(data.get("name", "system"), list(data["states"]), list(data["inputs"]), eqs,
                  {k: str(v) for k, v in data.get("equilibrium", {}).items()}, path)


def load_system(path: str | Path, check: bool = True) -> DiscreteSystem:
    """Read a system file (line format or JSON) and check the rank assumptions."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SystemFileError(exc.msg, exc.lineno, exc.colno, str(path)) from exc
        sys = system_from_json(data, str(path))
    else:
        sys = parse_system_text(text, str(path))
    if check:
        sys.check_rank_assumptions()
    return sys


def dump_system(sys: DiscreteSystem) -> str:
    lines = [f"system {sys.name}", "states: " + ", ".join(s.name for s in sys.states),
             "inputs: " + ", ".join(u.name for u in sys.inputs)]
    if sys.working_point:
        lines.append("equilibrium: " + ", ".join(f"{v.name}={c}" for v, c in sys.working_point.items()))
    for s, e in zip(sys.states, sys.f):
        lines.append(f"{s.name}+ = {to_str(e)}")
    return "\n".join(lines) + "\n"
