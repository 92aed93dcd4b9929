"""Triangular normal form, flat output and parameterization for flat systems.

Pipeline: straighten the Delta-sequence with first integrals, straighten the
D-sequence one step at a time (two inputs), read off the triangular blocks,
remove the redundant input of a subsystem, then descend the triangle to
express every variable through the flat output and its forward shifts.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .diffgeo import Chart, Distribution, VectorField, span_equal, xu_chart
from .firstint import AnsatzExhausted, first_integral, joint_first_integrals, rational_first_integrals
from .flattest import CheckResult, SequenceResult, compute_sequences
from .symkernel import (
    ZERO,
    Expr,
    SolveError,
    Var,
    diff,
    evaluate,
    generic_rank,
    jacobian,
    rref,
    solve_for,
    substitute,
    to_str,
    yvar,
)
from .system import DiscreteSystem

log = logging.getLogger(__name__)


class StructureViolation(AssertionError):
    pass


class CaseAnalysisViolation(AssertionError):
    pass


class PreconditionError(ValueError):
    pass


class StraighteningFailed(ArithmeticError):
    pass


# --- coordinate changes -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoordChange:
    """new = forward(old), old = inverse(new); coordinates not listed map to themselves."""

    forward: Mapping[Var, Expr]
    inverse: Mapping[Var, Expr]
    kind: str
    structure_preserving: bool
    old_coords: tuple[Var, ...]
    new_coords: tuple[Var, ...]
    label: str = ""

    def full_forward(self) -> dict[Var, Expr]:
        out = {v: Expr.var(v) for v in self.new_coords if v in self.old_coords}
        out.update(self.forward)
        return out

    def full_inverse(self) -> dict[Var, Expr]:
        out = {v: Expr.var(v) for v in self.old_coords if v in self.new_coords}
        out.update(self.inverse)
        return out

    def roundtrip_residuals(self) -> list[Expr]:
        """forward o inverse - id and inverse o forward - id, all of which must vanish."""
        fi, ff = self.full_inverse(), self.full_forward()
        res = [substitute(e, fi) - Expr.var(n) for n, e in self.forward.items()]
        res += [substitute(e, ff) - Expr.var(o) for o, e in self.inverse.items()]
        return res

    def is_invertible(self) -> bool:
        return all(r.is_zero() for r in self.roundtrip_residuals())


def _kind_of(new_vars: Iterable[Var]) -> str:
    kinds = {v.kind for v in new_vars}
    if kinds == {"state"}:
        return "state"
    if kinds == {"input"}:
        return "input"
    return "mixed"


def is_structure_preserving(forward: Mapping[Var, Expr], level: Mapping[Var, int]) -> bool:
    """State parts depend only on states of the same or higher level; inputs are unrestricted.

    ``level`` must cover the old coordinates and the new state coordinates.
    """
    for new, e in forward.items():
        if new.kind == "input":
            continue
        lv = level.get(new)
        if lv is None:
            return False
        for v in e.free_vars():
            if v.kind != "state" or level.get(v, 0) < lv:
                return False
    return True


def compose_forward(e: Expr, changes: Sequence[CoordChange]) -> Expr:
    """An expression in the final coordinates, rewritten in the original ones."""
    for ch in reversed(changes):
        e = substitute(e, ch.full_forward())
    return e


def compose_inverse(e: Expr, changes: Sequence[CoordChange]) -> Expr:
    """An expression in the original coordinates, rewritten in the final ones."""
    for ch in changes:
        e = substitute(e, ch.full_inverse())
    return e


def transform_field(v: VectorField, change: CoordChange, chart: Chart) -> VectorField:
    """Push a field on the old chart to the new chart through the change."""
    ff, fi = change.full_forward(), change.full_inverse()
    coeffs = {}
    for n in chart.coords:
        c = v(ff[n])
        if not c.is_zero():
            coeffs[n] = substitute(c, fi)
    return VectorField(chart, coeffs)


def transform_distribution(d: Distribution, change: CoordChange, chart: Chart) -> Distribution:
    return Distribution(chart, [transform_field(g, change, chart) for g in d.generators], _independent=True)


def apply_change(sys: DiscreteSystem, change: CoordChange, name: str | None = None) -> DiscreteSystem:
    """The system written in the new coordinates.

    New state equations are forward(f) evaluated through the old dynamics;
    everything is then expressed in the new coordinates.
    """
    fi = change.full_inverse()
    ff = change.full_forward()
    dyn = {s: fi_ for s, fi_ in zip(sys.states, sys.f)}
    new_states = tuple(v for v in change.new_coords if v.kind == "state")
    new_inputs = tuple(v for v in change.new_coords if v.kind == "input")
    f = []
    for s in new_states:
        e = ff[s]
        if any(v.kind == "input" for v in e.free_vars()):
            raise StructureViolation(f"state coordinate {s.display} depends on inputs")
        f.append(substitute(substitute(e, dyn), fi))
    allowed = set(new_states) | set(new_inputs)
    for s, e in zip(new_states, f):
        extra = e.free_vars() - allowed
        if extra:
            raise StructureViolation(f"equation for {s.display} still uses {sorted(v.display for v in extra)}")
    return DiscreteSystem(new_states, new_inputs, tuple(f), name or sys.name, {})


def _fresh(base: str, kind: str, taken: set[str]) -> Var:
    name = base
    k = 2
    while name in taken:
        name = f"{base}v{k}"
        k += 1
    taken.add(name)
    return Var(name, kind)


# --- Delta straightening ------------------------------------------------------


def _fields_on_x(sys: DiscreteSystem, delta: Distribution) -> list[VectorField]:
    chart = Chart(sys.states, "custom")
    out = []
    for g in delta.generators:
        out.append(VectorField(chart, {c.minus(): sys.from_plus(a) for c, a in g.coeffs.items()}))
    return out


def _rank(funcs: Sequence[Expr], wrt: Sequence[Var]) -> int:
    if not funcs:
        return 0
    return generic_rank(jacobian(list(funcs), list(wrt)))


def _pick_independent(cands: Sequence[Expr], need: int, base: Sequence[Expr], wrt: Sequence[Var], limit: int = 40):
    """Yield up to ``limit`` selections of ``need`` candidates independent of ``base``, greedy-first."""
    base = list(base)
    r0 = _rank(base, wrt)
    pool = [c for c in cands if _rank(base + [c], wrt) == r0 + 1]
    count = 0

    def rec(start, chosen, rank):
        nonlocal count
        if count >= limit:
            return
        if len(chosen) == need:
            count += 1
            yield list(chosen)
            return
        for i in range(start, len(pool)):
            c = pool[i]
            if _rank(base + chosen + [c], wrt) == rank + 1:
                yield from rec(i + 1, chosen + [c], rank + 1)
                if count >= limit:
                    return

    yield from rec(0, [], r0)


@dataclass
class DeltaStraightening:
    change: CoordChange
    system: DiscreteSystem
    level: dict[Var, int]
    blocks: list[list[Var]]


def state_var_name(level: int, index: int, prefix: str = "xb") -> str:
    return f"{prefix}{level}_{index}"


def _prune(cands: Sequence[Expr], wrt: Sequence[Var]) -> list[Expr]:
    """Drop candidates that are functions of simpler ones already kept."""
    kept: list[Expr] = []
    for c in cands:
        if _rank(kept + [c], wrt) > len(kept):
            kept.append(c)
    return kept


def _complexity(ds: DeltaStraightening) -> tuple:
    eqs = list(ds.system.f) + list(ds.change.inverse.values())
    return (sum(0 if e.is_polynomial() else 1 for e in eqs), sum(e.size() for e in eqs))


def straighten_delta(
    sys: DiscreteSystem, seq: SequenceResult, max_degree: int = 3, max_options: int = 12
) -> DeltaStraightening:
    """State change x_bar = Phi(x) with Delta_k spanned by the first dim(Delta_k) new coordinate fields.

    Several admissible selections of first integrals are tried; the one
    giving the simplest transformed system wins.
    """
    if not seq.flat:
        raise PreconditionError("Delta straightening requires a flat system")
    kbar = seq.kbar
    dims = [0] + [d.dim for d in seq.Delta]
    xs = list(sys.states)
    per_level: dict[int, list[Expr]] = {}
    for k in range(kbar, 1, -1):
        fields = _fields_on_x(sys, seq.Delta[k - 2])
        per_level[k] = _prune(joint_first_integrals(fields, xs, max_degree), xs)
    per_level[1] = [Expr.var(x) for x in xs]
    need = {k: dims[k] - dims[k - 1] for k in range(1, kbar + 1)}

    def search(k, chosen):
        if k == 0:
            yield chosen
            return
        cands = per_level[k]
        base = [e for _, e in chosen]
        for pick in _pick_independent(cands, need[k], base, xs):
            yield from search(k - 1, chosen + [(k, e) for e in pick])

    tried = 0
    last_err: Exception | None = None
    good = []
    for chosen in search(kbar, []):
        tried += 1
        if tried > 60 or len(good) >= max_options:
            break
        res = _delta_change(sys, chosen)
        if isinstance(res, Exception):
            last_err = res
            continue
        good.append(res)
    if good:
        return min(good, key=_complexity)
    # rational candidates as a last resort, one extra pass
    for k in range(kbar, 1, -1):
        fields = _fields_on_x(sys, seq.Delta[k - 2])
        per_level[k] = _prune(per_level[k] + rational_first_integrals(fields, xs, max_degree), xs)
    for chosen in search(kbar, []):
        res = _delta_change(sys, chosen)
        if not isinstance(res, Exception):
            return res
        last_err = res
    counts = {k: len(per_level[k]) for k in per_level}
    short = [k for k in per_level if next(_pick_independent(per_level[k], need[k], [], xs, 1), None) is None]
    if short:
        raise AnsatzExhausted(max_degree, f"not enough independent first integrals up to degree {max_degree} ({counts})")
    raise StraighteningFailed(f"no invertible straightening among the candidates: {last_err}")


def _delta_change(sys: DiscreteSystem, chosen: list[tuple[int, Expr]]):
    chosen = sorted(chosen, key=lambda t: -t[0])
    blocks: dict[int, list[Var]] = {}
    forward = {}
    level = {}
    for k, e in chosen:
        idx = len(blocks.setdefault(k, [])) + 1
        v = Var(state_var_name(k, idx), "state")
        blocks[k].append(v)
        forward[v] = e
        level[v] = k
    new_states = tuple(v for k in sorted(blocks, reverse=True) for v in blocks[k])
    eqs = [Expr.var(v) - forward[v] for v in new_states]
    try:
        inverse = solve_for(eqs, list(sys.states))
    except SolveError as exc:
        return exc
    change = CoordChange(
        dict(forward),
        inverse,
        "state",
        False,
        tuple(sys.states) + tuple(sys.inputs),
        new_states + tuple(sys.inputs),
        "straighten Delta",
    )
    if not change.is_invertible():
        return StraighteningFailed("round trip of the Delta straightening is not the identity")
    try:
        new_sys = apply_change(sys, change)
    except StructureViolation as exc:
        return exc
    return DeltaStraightening(change, new_sys, level, [blocks[k] for k in sorted(blocks)])


def delta_is_straight(sys_bar: DiscreteSystem, level: Mapping[Var, int], seq_bar: SequenceResult) -> list[CheckResult]:
    """Delta_k equals the span of the coordinate fields of levels 1..k (checked on a fresh run)."""
    out = []
    for k, d in enumerate(seq_bar.Delta, start=1):
        coords = [s.plus() for s in sys_bar.states if level[s] <= k]
        target = Distribution.coordinate(d.chart, coords)
        out.append(CheckResult(f"Delta_{k} straight", span_equal(d, target)))
    return out


# --- D straightening (two inputs) ---------------------------------------------


@dataclass
class ZPartition:
    blocks: list[list[Var]]
    complements: list[Var | None]
    xhat_blocks: list[list[Var]]

    def all_z(self) -> list[Var]:
        return [v for b in self.blocks for v in b]

    def describe(self) -> dict:
        return {
            "z": [[v.display for v in b] for b in self.blocks],
            "complements": [c.display if c else None for c in self.complements],
            "xhat": [[v.display for v in b] for b in self.xhat_blocks],
        }


@dataclass
class StepRecord:
    k: int
    case: str
    replaced: Var | None = None
    new_var: Var | None = None
    integral: Expr | None = None


@dataclass
class DStraightening:
    system: DiscreteSystem
    level: dict[Var, int]
    changes: list[CoordChange]
    zpart: ZPartition
    steps: list[StepRecord]
    D: list[Distribution]


def _restricted_rows(d: Distribution, cols: Sequence[Var], outside: Sequence[Var]) -> list[list[Expr]]:
    rows = []
    for g in d.generators:
        for v in outside:
            if v in g.coeffs:
                raise CaseAnalysisViolation(f"D has a component along {v.display} outside E")
        rows.append([g.coeffs.get(c, ZERO) for c in cols])
    return rows


def straighten_D_two_input(
    sys_bar: DiscreteSystem,
    level: Mapping[Var, int],
    D_bar: Sequence[Distribution],
    max_degree: int = 3,
    names: set[str] | None = None,
) -> DStraightening:
    """Straighten the D-sequence step by step with structure-preserving changes."""
    m = sys_bar.m
    level = dict(level)
    for u in sys_bar.inputs:
        level[u] = 0
    kbar = max(level.values())
    taken = set(names or ()) | {v.name for v in sys_bar.xu}
    cur = sys_bar
    D = list(D_bar)
    z: list[list[Var]] = []
    comps: list[Var | None] = []
    zc: Var | None = None
    changes: list[CoordChange] = []
    steps: list[StepRecord] = []
    for k in range(kbar):
        prev = [v for b in z for v in b]
        states_k = [s for s in cur.states if level[s] == k] if k else []
        if k == 0:
            N = list(cur.inputs)
        else:
            N = ([zc] if zc is not None else []) + states_k
            if m == 2:
                dzc = 1 if zc is not None else 0
                if dzc > 1 or len(states_k) < 1 or dzc + len(states_k) > 2:
                    raise CaseAnalysisViolation(
                        f"step {k}: dim z_c = {dzc}, dim x_bar_k = {len(states_k)} violate the two-input bounds"
                    )
        E_coords = prev + N
        Dk = D[k]
        chart = Dk.chart
        outside = [c for c in chart.coords if c not in E_coords]
        Ek = Distribution.coordinate(chart, E_coords)
        if not Ek.contains_all(Dk):
            raise CaseAnalysisViolation(f"step {k}: D_{k} not inside E_{k}")
        if Dk.dim == Ek.dim:
            if k == 0:
                z.append(list(N))
            else:
                z.append(states_k + ([zc] if zc is not None else []))
            comps.append(None)
            zc = None
            steps.append(StepRecord(k, "a"))
            continue
        extra = Dk.dim - len(prev)
        if Dk.dim != Ek.dim - 1 or extra != len(N) - 1:
            raise CaseAnalysisViolation(f"step {k}: dim D = {Dk.dim}, dim E = {Ek.dim}, prefix {len(prev)}")
        case = "b" if (k == 0 or zc is None) else "c"
        rows = _restricted_rows(Dk, N, outside)
        done = False
        errors = []
        for j in N:
            others = [c for c in N if c != j]
            order = [N.index(c) for c in others] + [N.index(j)]
            red, piv = rref(rows, len(N), col_order=order)
            red = [r for r in red if any(not x.is_zero() for x in r)]
            if sorted(piv) != sorted(N.index(c) for c in others):
                continue
            alphas = [r[N.index(j)] for r in red]
            if any(a.free_vars() & set(prev) for a in alphas):
                errors.append(f"coefficient along {j.display} depends on earlier z")
                continue
            if all(a.is_zero() for a in alphas):
                z.append(others)
                comps.append(j)
                zc = j
                steps.append(StepRecord(k, case))
                done = True
                break
            fields = []
            for r in red:
                fields.append(VectorField(chart, {c: x for c, x in zip(N, r)}))
            try:
                phi = first_integral(fields, prev, j, max_degree)
            except AnsatzExhausted as exc:
                errors.append(str(exc))
                continue
            if j.kind == "state":
                base = "xh" + j.name[2:] if j.name.startswith(("xb", "xh")) else "xh" + j.name
                new = _fresh(base, "state", taken)
            else:
                new = _fresh("uh" + j.name.lstrip("uh"), "input", taken)
            try:
                inv = solve_for([Expr.var(new) - phi], [j])
            except SolveError as exc:
                errors.append(f"cannot invert {to_str(phi)} for {j.display}: {exc}")
                continue
            lv = dict(level)
            lv[new] = level[j]
            sp = is_structure_preserving({new: phi}, lv)
            if not sp:
                errors.append(f"{to_str(phi)} is not structure preserving")
                continue
            old_coords = tuple(cur.xu)
            new_coords = tuple(new if c == j else c for c in old_coords)
            change = CoordChange({new: phi}, inv, _kind_of([new]), True, old_coords, new_coords, f"step {k} case {case}")
            if not change.is_invertible():
                errors.append("replacement is not invertible")
                continue
            new_sys = apply_change(cur, change)
            new_chart = xu_chart(new_sys.states, new_sys.inputs)
            D = D[:k] + [transform_distribution(d, change, new_chart) for d in D[k:]]
            cur = new_sys
            level = lv
            del level[j]
            changes.append(change)
            z.append(others)
            comps.append(new)
            zc = new
            steps.append(StepRecord(k, case, j, new, phi))
            done = True
            break
        if not done:
            if errors and all("first integral" in e or "degree" in e for e in errors):
                raise AnsatzExhausted(max_degree, f"step {k}: " + "; ".join(errors))
            raise CaseAnalysisViolation(f"step {k}: no admissible renumbering ({'; '.join(errors) or 'rank pattern'})")
        # the processed prefix must now be straight
        for l in range(k + 1):
            target = Distribution.coordinate(D[l].chart, [v for b in z[: l + 1] for v in b])
            if not span_equal(D[l], target):
                raise CaseAnalysisViolation(f"D_{l} is not straight after step {k}")
    if zc is not None:
        raise CaseAnalysisViolation("the last complement is not empty")
    xhat_blocks = [[s for s in cur.states if level[s] == k] for k in range(1, kbar + 1)]
    return DStraightening(cur, level, changes, ZPartition(z, comps, xhat_blocks), steps, D)


def rename_final(sys: DiscreteSystem, taken: set[str]) -> CoordChange | None:
    """Rename the remaining bar coordinates to hat coordinates."""
    mapping = {}
    for st in sys.states:
        if st.name.startswith("xb"):
            mapping[st] = _fresh("xh" + st.name[2:], "state", taken)
    if not mapping:
        return None
    forward = {n: Expr.var(o) for o, n in mapping.items()}
    inverse = {o: Expr.var(n) for o, n in mapping.items()}
    old = tuple(sys.xu)
    return CoordChange(forward, inverse, "state", True, old, tuple(mapping.get(c, c) for c in old), "rename")


# --- triangular form ----------------------------------------------------------


@dataclass
class TriangularForm:
    system: DiscreteSystem
    level: dict[Var, int]
    zpart: ZPartition
    changes: list[CoordChange]
    flat_output: list[Var] = field(default_factory=list)
    redundancy_eliminated: bool = False
    redundant_level: int | None = None
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def kbar(self) -> int:
        return len(self.zpart.xhat_blocks)

    def subsystem(self, k: int) -> list[tuple[Var, Expr]]:
        return [(s, self.system.rhs(s)) for s in self.zpart.xhat_blocks[k - 1]]

    def equations(self) -> list[str]:
        out = []
        for k in range(self.kbar, 0, -1):
            for s, e in self.subsystem(k):
                out.append(f"{s.display}+ = {to_str(e)}")
        return out


def triangular_checks(tf: TriangularForm) -> list[CheckResult]:
    """Dependency pattern, containment of x_hat_k in later z blocks, and the rank conditions."""
    out = []
    zp = tf.zpart
    kbar = tf.kbar
    top = zp.xhat_blocks[-1] if zp.xhat_blocks else []
    allz = zp.all_z()
    expected = set(tf.system.xu) - set(top)
    out.append(CheckResult("z blocks cover all variables except the top states", set(allz) == expected and len(allz) == len(expected)))
    out.append(CheckResult("last complement empty", not zp.complements or zp.complements[-1] is None))
    for k in range(1, kbar + 1):
        for s, e in tf.subsystem(k):
            for j in range(0, k - 1):
                for v in zp.blocks[j]:
                    if not diff(e, v).is_zero():
                        out.append(CheckResult(f"f_{k} independent of z_{j}", False, f"{s.display} depends on {v.display}"))
    if all(c.passed for c in out):
        out.append(CheckResult("triangular dependency pattern", True))
    for k in range(1, kbar):
        later = {v for b in zp.blocks[k:] for v in b}
        ok = set(zp.xhat_blocks[k - 1]) <= later
        out.append(CheckResult(f"x_hat_{k} contained in z_{k}..z_{kbar - 1}", ok))
    for j in range(1, kbar + 1):
        fs = [e for _, e in tf.subsystem(j)]
        r = generic_rank(jacobian(fs, zp.blocks[j - 1])) if fs and zp.blocks[j - 1] else 0
        dimx = len(zp.xhat_blocks[j - 1])
        out.append(CheckResult(f"rank d f_{j} / d z_{j - 1} = dim x_hat_{j}", r == dimx, f"{r} vs {dimx}"))
    return out


def assemble_triangular(ds: DStraightening, changes_before: Sequence[CoordChange] = ()) -> TriangularForm:
    tf = TriangularForm(ds.system, dict(ds.level), ds.zpart, list(changes_before) + list(ds.changes), steps=ds.steps)
    bad = [c for c in triangular_checks(tf) if not c.passed]
    if bad:
        raise StructureViolation("; ".join(f"{c.name} ({c.detail})" if c.detail else c.name for c in bad))
    return tf


def _completed_square(f: Expr, keep: Var, slot: Var) -> Expr | None:
    """keep + b/(2a) when f = a*keep^2 + b*keep + c with a free of keep and slot."""
    if not f.den.is_constant() or f.degree_in(keep)[0] != 2:
        return None
    a = diff(diff(f, keep), keep) / 2
    if a.is_zero() or a.free_vars() & {keep, slot}:
        return None
    b = substitute(diff(f, keep), {keep: ZERO})
    if b.is_zero():
        return None
    return Expr.var(keep) + b / (2 * a)


def eliminate_redundant_input(tf: TriangularForm, taken: set[str] | None = None) -> TriangularForm:
    """Make the one subsystem with a redundant input depend on a single combined variable."""
    sys = tf.system
    if sys.m != 2:
        raise PreconditionError("redundant-input elimination is defined for two inputs")
    zp = tf.zpart
    top = zp.xhat_blocks[-1]
    if len(top) == 2:
        tf.flat_output = list(top)
        return tf
    hits = [k for k in range(2, tf.kbar + 1) if len(zp.xhat_blocks[k - 1]) == 1 and len(zp.blocks[k - 1]) == 2]
    if len(hits) != 1:
        raise StructureViolation(f"expected exactly one subsystem with a redundant input, found {hits}")
    k = hits[0]
    (s_k, f_k), = tf.subsystem(k)
    zk1 = zp.blocks[k - 1]
    # replace the second component unless that would turn an input dependence into a state
    order = [1, 0]
    if zk1[0].kind == "input" and zk1[1].kind == "state":
        order = [0, 1]
    taken = set(taken or ()) | {v.name for v in sys.xu}
    level = dict(tf.level)
    for u in sys.inputs:
        level[u] = 0
    last = None
    for idx, shifted in [(i, False) for i in order] + [(i, True) for i in order]:
        slot = zk1[idx]
        keep = zk1[1 - idx]
        if diff(f_k, slot).is_zero():
            last = f"f_{k} does not depend on {slot.display}"
            continue
        keep_expr = _completed_square(f_k, keep, slot) if shifted else None
        if shifted and keep_expr is None:
            continue
        if f_k == Expr.var(slot):
            tf.redundancy_eliminated = True
            tf.redundant_level = k
            tf.flat_output = list(top) + [keep]
            return tf
        new = _fresh(("xr" + slot.name[2:]) if slot.kind == "state" else ("ur" + slot.name.lstrip("uh")), slot.kind, taken)
        forward = {new: f_k}
        new_keep = keep
        if keep_expr is not None:
            new_keep = _fresh(("xr" + keep.name[2:]) if keep.kind == "state" else ("ur" + keep.name.lstrip("uh")), keep.kind, taken)
            forward[new_keep] = keep_expr
        lv = dict(level)
        lv[new] = level[slot]
        lv[new_keep] = level[keep]
        if not is_structure_preserving(forward, lv):
            last = f"{new.display} = {to_str(f_k)} is not structure preserving"
            continue
        replaced = [slot] + ([keep] if keep_expr is not None else [])
        try:
            inv = solve_for([Expr.var(n) - e for n, e in forward.items()], replaced)
        except SolveError as exc:
            last = f"cannot invert for {slot.display}: {exc}"
            continue
        ren_map = {slot: new, keep: new_keep}
        ren = lambda v: ren_map.get(v, v)
        old = tuple(sys.xu)
        change = CoordChange(forward, inv, _kind_of(forward), True, old, tuple(ren(c) for c in old),
                             "eliminate redundant input")
        if not change.is_invertible():
            last = "replacement is not invertible"
            continue
        new_sys = apply_change(sys, change)
        for v in replaced:
            if v not in (new, new_keep):
                del lv[v]
        zp2 = ZPartition(
            [[ren(v) for v in b] for b in zp.blocks],
            [ren(c) if c else None for c in zp.complements],
            [[ren(v) for v in b] for b in zp.xhat_blocks],
        )
        out = TriangularForm(new_sys, {v: l for v, l in lv.items() if v.kind == "state"}, zp2, tf.changes + [change],
                             redundancy_eliminated=True, redundant_level=k, steps=tf.steps)
        bad = [c for c in triangular_checks(out) if not c.passed]
        if bad:
            raise StructureViolation("after elimination: " + "; ".join(c.name for c in bad))
        (_, fk_new), = out.subsystem(k)
        if not diff(fk_new, new_keep).is_zero():
            raise StructureViolation(f"subsystem {k} still depends on {new_keep.display}")
        out.flat_output = list(top) + [new_keep]
        return out
    raise StructureViolation(f"no admissible redundant-input elimination at level {k}: {last}")


def extract_flat_output(tf: TriangularForm, changes: Sequence[CoordChange] | None = None) -> list[Expr]:
    """Flat output pulled back to the original coordinates."""
    changes = tf.changes if changes is None else changes
    if not tf.flat_output:
        top = tf.zpart.xhat_blocks[-1]
        if len(top) != tf.system.m:
            raise StructureViolation("flat output requires redundant-input elimination first")
        tf.flat_output = list(top)
    return [compose_forward(Expr.var(v), changes) for v in tf.flat_output]


def triangular_form_from_change(
    sys: DiscreteSystem,
    forward: Mapping[Var, Expr],
    z_blocks: Sequence[Sequence[Var]],
    xhat_blocks: Sequence[Sequence[Var]],
    flat_output: Sequence[Var],
    label: str = "given",
) -> TriangularForm:
    """A triangular form from a complete change written down by hand.

    ``forward`` gives every new coordinate in the original ones; the inverse
    is solved for. Nothing here trusts the change: callers run
    ``triangular_checks`` and the parameterization on the result.
    """
    new = list(forward)
    moved = {n: e for n, e in forward.items() if not (n in sys.xu and (e - Expr.var(n)).is_zero())}
    solved = [v for v in sys.xu if v not in new]
    inv = solve_for([Expr.var(n) - e for n, e in moved.items()], solved)
    change = CoordChange(moved, inv, _kind_of(new), False, tuple(sys.xu), tuple(new), label)
    if not change.is_invertible():
        raise StructureViolation("the given change does not round trip")
    new_sys = apply_change(sys, change)
    level = {s: k for k, b in enumerate(xhat_blocks, start=1) for s in b}
    zp = ZPartition([list(b) for b in z_blocks], [None] * len(z_blocks), [list(b) for b in xhat_blocks])
    return TriangularForm(new_sys, level, zp, [change], list(flat_output))


# --- parameterization ---------------------------------------------------------


def shift_expr(e: Expr, k: int = 1) -> Expr:
    """Advance every flat-output variable in ``e`` by ``k`` steps."""
    ys = [v for v in e.free_vars() if v.kind == "flat-output"]
    if not ys:
        return e
    return substitute(e, {v: Expr.var(v.shifted(k)) for v in ys})


@dataclass
class Parameterization:
    Fx: dict[Var, Expr]
    Fu: dict[Var, Expr]
    R: tuple[int, ...]
    flat_output: list[Expr]
    outputs: tuple[Var, ...]

    def all_maps(self) -> dict[Var, Expr]:
        out = dict(self.Fx)
        out.update(self.Fu)
        return out


def max_shifts(exprs: Iterable[Expr], m: int) -> tuple[int, ...]:
    R = [0] * m
    for e in exprs:
        for v in e.free_vars():
            if v.kind == "flat-output":
                j = int(v.name[1:]) - 1
                R[j] = max(R[j], v.shift)
    return tuple(R)


def build_parameterization(tf: TriangularForm, sys: DiscreteSystem) -> Parameterization:
    """Descend the triangle solving each subsystem for its z variables, then pull back.

    ``sys`` is the original system; the accumulated changes in ``tf`` connect
    its coordinates to the triangular ones.
    """
    if not tf.flat_output:
        extract_flat_output(tf)
    m = sys.m
    ys = tuple(yvar(j + 1) for j in range(m))
    P: dict[Var, Expr] = {v: Expr.var(y) for v, y in zip(tf.flat_output, ys)}
    for k in range(tf.kbar, 0, -1):
        block = tf.subsystem(k)
        for s, _ in block:
            if s not in P:
                raise StructureViolation(f"{s.display} is not yet parameterized at level {k}")
        unknowns = [v for v in tf.zpart.blocks[k - 1] if v not in P]
        eqs = [shift_expr(P[s]) - substitute(e, P) for s, e in block]
        if unknowns:
            try:
                sol = solve_for(eqs, unknowns)
            except SolveError as exc:
                exc.level = k
                if hasattr(exc, "add_note"):
                    exc.add_note(f"while solving subsystem {k} for {[v.display for v in unknowns]}")
                raise
            P.update(sol)
        for e in eqs:
            res = substitute(e, P)
            if not res.is_zero():
                raise StructureViolation(f"subsystem {k} is inconsistent with the parameterization: {to_str(res)}")
    missing = [v for v in tf.system.xu if v not in P]
    if missing:
        raise StructureViolation(f"variables left unparameterized: {[v.display for v in missing]}")
    Fx, Fu = {}, {}
    for o in sys.states:
        Fx[o] = substitute(compose_inverse(Expr.var(o), tf.changes), P)
    for o in sys.inputs:
        Fu[o] = substitute(compose_inverse(Expr.var(o), tf.changes), P)
    flat = extract_flat_output(tf)
    R = max_shifts(list(Fx.values()) + list(Fu.values()), m)
    return Parameterization(Fx, Fu, R, flat, ys)


@dataclass
class ParameterizationCheck:
    ok: bool
    residuals: list[tuple[str, Expr]]
    method: str

    def __iter__(self):
        return iter((self.ok, self.residuals))


def _flat_vars(exprs: Iterable[Expr]) -> set[Var]:
    out = set()
    for e in exprs:
        out |= {v for v in e.free_vars() if v.kind == "flat-output"}
    return out


def verify_parameterization(
    sys: DiscreteSystem,
    p: Parameterization,
    symbolic_limit: int = 4000,
    points: int = 8,
    seed: int = 0,
) -> ParameterizationCheck:
    """Substitute F_x, F_u into the dynamics and into the flat output; all residuals must vanish.

    Small cases are checked symbolically. When the substitution would be
    large, the residuals are evaluated exactly at random rational points of
    the flat-output shifts instead.
    """
    maps = p.all_maps()
    missing = [(f"{v.display}: missing", Expr.const(1)) for v in sys.xu if v not in maps]
    leftover = [
        (f"{v.display} uses non-output variables", Expr.const(1))
        for v, e in maps.items()
        if any(w.kind != "flat-output" for w in e.free_vars())
    ]
    leftover += [
        (f"y{j} uses other variables", Expr.const(1))
        for j, phi in enumerate(p.flat_output, start=1)
        if not phi.free_vars() <= set(sys.xu)
    ]
    if missing or leftover:
        return ParameterizationCheck(False, missing + leftover, "structural")
    cost = max(e.size() for e in sys.f) * max(e.size() for e in maps.values())
    if cost <= symbolic_limit:
        residuals = []
        for s, f in zip(sys.states, sys.f):
            residuals.append((f"{s.display}+", shift_expr(p.Fx[s]) - substitute(f, maps)))
        for j, (phi, y) in enumerate(zip(p.flat_output, p.outputs), start=1):
            residuals.append((f"y{j}", substitute(phi, maps) - Expr.var(y)))
        return ParameterizationCheck(all(r.is_zero() for _, r in residuals), residuals, "symbolic")
    rng = random.Random(seed)
    shifted = {s: shift_expr(p.Fx[s]) for s in sys.states}
    yv = sorted(_flat_vars(list(maps.values()) + list(shifted.values())) | set(p.outputs), key=lambda v: v.sort_key)
    worst: dict[str, Fraction] = {}
    done = tries = 0
    while done < points:
        tries += 1
        if tries > 20 * points:
            raise ArithmeticError("could not find evaluation points away from poles")
        pt = {v: Fraction(rng.randint(-50, 50), rng.randint(1, 7)) for v in yv}
        try:
            xu = {v: evaluate(e, pt) for v, e in maps.items()}
            vals = {}
            for s, f in zip(sys.states, sys.f):
                vals[f"{s.display}+"] = evaluate(shifted[s], pt) - evaluate(f, xu)
            for j, (phi, y) in enumerate(zip(p.flat_output, p.outputs), start=1):
                vals[f"y{j}"] = evaluate(phi, xu) - pt[y]
        except ZeroDivisionError:
            continue
        done += 1
        for k, r in vals.items():
            if r != 0 or k not in worst:
                worst[k] = r if r != 0 else worst.get(k, Fraction(0))
    residuals = [(k, Expr.const(r)) for k, r in worst.items()]
    return ParameterizationCheck(all(r == 0 for r in worst.values()), residuals, f"pointwise({points})")


# --- driver -------------------------------------------------------------------


def _rename_zpart(zp: ZPartition, mapping: Mapping[Var, Var]) -> ZPartition:
    r = lambda v: mapping.get(v, v)
    return ZPartition(
        [[r(v) for v in b] for b in zp.blocks],
        [r(c) if c else None for c in zp.complements],
        [[r(v) for v in b] for b in zp.xhat_blocks],
    )


@dataclass
class NormalFormResult:
    seq: SequenceResult
    delta: DeltaStraightening
    dstraight: DStraightening
    triangular: TriangularForm
    final: TriangularForm
    flat_output: list[Expr]

    @property
    def changes(self) -> list[CoordChange]:
        return self.final.changes


def normal_form(
    sys: DiscreteSystem,
    seq: SequenceResult | None = None,
    max_degree: int = 3,
    force_multi: bool = False,
) -> NormalFormResult:
    seq = seq or compute_sequences(sys)
    if not seq.flat:
        raise PreconditionError("the system is not flat; no triangular form exists")
    if sys.m > 2 and not force_multi:
        raise PreconditionError(f"the explicit construction is for at most two inputs (m = {sys.m}); use --force-multi to attempt it")
    ds = straighten_delta(sys, seq, max_degree)
    chart = xu_chart(ds.system.states, ds.system.inputs)
    D_bar = [transform_distribution(d, ds.change, chart) for d in seq.D]
    taken = {v.name for v in sys.xu} | {v.name for v in ds.system.xu}
    dst = straighten_D_two_input(ds.system, ds.level, D_bar, max_degree, taken)
    taken |= {v.name for v in dst.system.xu}
    changes = [ds.change] + dst.changes
    cur, level, zp = dst.system, {v: l for v, l in dst.level.items() if v.kind == "state"}, dst.zpart
    ren = rename_final(cur, taken)
    if ren is not None:
        mapping = {o: next(iter(e.free_vars())) for o, e in ren.inverse.items()}
        cur = apply_change(cur, ren)
        level = {mapping.get(v, v): l for v, l in level.items()}
        zp = _rename_zpart(zp, mapping)
        changes.append(ren)
    ds_final = DStraightening(cur, level, [], zp, dst.steps, dst.D)
    tf = assemble_triangular(ds_final, changes)
    if sys.m == 2:
        final = eliminate_redundant_input(tf, taken)
    else:
        top = tf.zpart.xhat_blocks[-1]
        if len(top) != sys.m:
            raise StructureViolation(f"top block has {len(top)} states for {sys.m} inputs; redundant inputs are not handled for m != 2")
        final = tf
        final.flat_output = list(top)
    flat = extract_flat_output(final)
    return NormalFormResult(seq, ds, dst, tf, final, flat)
