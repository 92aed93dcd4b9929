"""The nested-distribution flatness test.

Builds D_k (largest projectable part of E_k), Delta_{k+1} = f_*(D_k) and
E_{k+1} = pi^{-1}(Delta_{k+1}) until the Delta dimension stops growing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .diffgeo import (
    Distribution,
    is_involutive,
    largest_projectable_subdistribution,
    preimage_under_pi,
    pushforward_distribution,
    span_equal,
    xplus_chart,
)
from .system import DiscreteSystem

log = logging.getLogger(__name__)


class InternalInvariantViolation(AssertionError):
    pass


class SequenceNonTermination(RuntimeError):
    pass


@dataclass
class SequenceResult:
    D: list[Distribution]
    E: list[Distribution]
    Delta: list[Distribution]
    kbar: int
    flat: bool
    sfl: bool
    n: int
    m: int
    audit: list[dict] = field(default_factory=list)

    @property
    def delta_dims(self) -> tuple[int, ...]:
        return tuple(d.dim for d in self.Delta)

    @property
    def D_dims(self) -> tuple[int, ...]:
        return tuple(d.dim for d in self.D)

    @property
    def E_dims(self) -> tuple[int, ...]:
        return tuple(e.dim for e in self.E)

    def first_strict_step(self) -> int | None:
        """Smallest k with D_k a proper subdistribution of E_k."""
        for k, (d, e) in enumerate(zip(self.D, self.E)):
            if d.dim < e.dim:
                return k
        return None


def _tag(exc: Exception, k: int) -> Exception:
    exc.step = k
    if hasattr(exc, "add_note"):
        exc.add_note(f"raised at step k={k}")
    return exc


def compute_sequences(sys: DiscreteSystem) -> SequenceResult:
    sys.check_rank_assumptions()
    chart_plus = xplus_chart(sys.states)
    delta = Distribution(chart_plus, [], _independent=True)
    Ds, Es, Deltas, audit = [], [], [], []
    for k in range(sys.n + 2):
        if k == sys.n + 1:
            raise SequenceNonTermination(f"no stagnation after {sys.n + 1} steps (dims {[d.dim for d in Deltas]})")
        E = preimage_under_pi(delta, sys.states, sys.inputs)
        try:
            res = largest_projectable_subdistribution(sys, E)
        except Exception as exc:
            raise _tag(exc, k)
        nxt = res.pushforward
        audit.append(
            {
                "k": k,
                "dim_E": E.dim,
                "dim_D": res.D.dim,
                "dim_Delta_next": nxt.dim,
                "rejected_candidates": res.audit,
            }
        )
        if nxt.dim == delta.dim:
            break
        Ds.append(res.D)
        Es.append(E)
        Deltas.append(nxt)
        delta = nxt
    kbar = len(Deltas)
    flat = (Deltas[-1].dim if Deltas else 0) == sys.n
    sfl = flat and all(d.dim == e.dim for d, e in zip(Ds, Es))
    return SequenceResult(Ds, Es, Deltas, kbar, flat, sfl, sys.n, sys.m, audit)


def is_flat(r: SequenceResult, n: int) -> bool:
    return (r.Delta[-1].dim if r.Delta else 0) == n


def is_static_feedback_linearizable(r: SequenceResult, n: int) -> bool:
    return is_flat(r, n) and all(span_equal(d, e) for d, e in zip(r.D, r.E))


def check_last_step_projectable(r: SequenceResult) -> bool:
    """On a flat verdict the last E must be entirely projectable."""
    if not r.D:
        return True
    ok = span_equal(r.D[-1], r.E[-1])
    if r.flat and not ok:
        raise InternalInvariantViolation(f"D_{r.kbar - 1} != E_{r.kbar - 1} on a flat verdict")
    return ok


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def sequence_checks(sys: DiscreteSystem, r: SequenceResult) -> list[CheckResult]:
    """Every structural property the sequences must satisfy, recomputed independently."""
    out: list[CheckResult] = []

    def add(name, ok, detail=""):
        out.append(CheckResult(name, bool(ok), detail))

    for k in range(1, len(r.D)):
        add(f"nested D_{k - 1} in D_{k}", r.D[k].contains_all(r.D[k - 1]))
    for k in range(1, len(r.Delta)):
        add(f"nested Delta_{k} in Delta_{k + 1}", r.Delta[k].contains_all(r.Delta[k - 1]))
    for k, (d, e) in enumerate(zip(r.D, r.E)):
        add(f"D_{k} in E_{k}", e.contains_all(d))
    for k, d in enumerate(r.D):
        try:
            pushed = pushforward_distribution(sys, d)
            add(f"f_*(D_{k}) = Delta_{k + 1}", span_equal(pushed, r.Delta[k]))
        except Exception as exc:  # reported, not raised
            add(f"f_*(D_{k}) = Delta_{k + 1}", False, f"{type(exc).__name__}: {exc}")
    for k, e in enumerate(r.E):
        prev = r.Delta[k - 1].dim if k > 0 else 0
        add(f"dim E_{k} = dim Delta_{k} + m", e.dim == prev + sys.m, f"{e.dim} vs {prev} + {sys.m}")
    for k, d in enumerate(r.D):
        ok, w = is_involutive(d)
        add(f"D_{k} involutive", ok, "" if ok else f"bracket {w} not in span")
    for k, d in enumerate(r.Delta):
        ok, w = is_involutive(d)
        add(f"Delta_{k + 1} involutive", ok, "" if ok else f"bracket {w} not in span")
    if r.flat and r.D:
        add(f"D_{r.kbar - 1} = E_{r.kbar - 1} (flat)", span_equal(r.D[-1], r.E[-1]))
    add("flat verdict consistent", r.flat == is_flat(r, sys.n))
    add("sfl verdict consistent", r.sfl == is_static_feedback_linearizable(r, sys.n))
    if sys.m == 2:
        for k in range(1, len(r.D)):
            inc = r.D[k].dim - r.D[k - 1].dim
            add(f"dim D_{k} - dim D_{k - 1} in {{1,2}}", inc in (1, 2), str(inc))
    return out
