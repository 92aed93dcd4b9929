"""Invariant suite run against pipeline artifacts.

Everything is recomputed from the original system and the recorded
coordinate changes; nothing is taken from the pipeline's own bookkeeping
except the levels and the z-partition being claimed.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .diffgeo import Distribution, span_equal
from .flattest import CheckResult, SequenceResult, compute_sequences, sequence_checks
from .normalform import (
    CoordChange,
    Parameterization,
    TriangularForm,
    ZPartition,
    apply_change,
    triangular_checks,
    verify_parameterization,
)
from .symkernel import Var, to_str
from .system import DiscreteSystem


def replay(sys: DiscreteSystem, changes: Sequence[CoordChange]) -> tuple[DiscreteSystem, list[CheckResult]]:
    """Apply the ledger one change at a time, checking each round trip."""
    out = []
    cur = sys
    for i, ch in enumerate(changes):
        bad = [r for r in ch.roundtrip_residuals() if not r.is_zero()]
        out.append(CheckResult(f"change {i} ({ch.label}) round trip", not bad, to_str(bad[0]) if bad else ""))
        cur = apply_change(cur, ch)
    return cur, out


def delta_straight_checks(final: DiscreteSystem, level: Mapping[Var, int], seq: SequenceResult) -> list[CheckResult]:
    out = []
    for k, d in enumerate(seq.Delta, start=1):
        coords = [s.plus() for s in final.states if level.get(s, 0) <= k and s in level]
        ok = span_equal(d, Distribution.coordinate(d.chart, coords))
        out.append(CheckResult(f"Delta_{k} straight in the final coordinates", ok,
                               "" if ok else "expected span{" + ", ".join(f"d_{c.display}" for c in coords) + "}"))
    return out


def d_straight_checks(seq: SequenceResult, zpart: ZPartition) -> list[CheckResult]:
    out = []
    for k, d in enumerate(seq.D):
        coords = [v for b in zpart.blocks[: k + 1] for v in b]
        ok = span_equal(d, Distribution.coordinate(d.chart, coords))
        out.append(CheckResult(f"D_{k} = span of d_z0..d_z{k}", ok))
    return out


def invariant_suite(
    sys: DiscreteSystem,
    seq: SequenceResult | None = None,
    final: TriangularForm | None = None,
    param: Parameterization | None = None,
) -> list[CheckResult]:
    """All checks that apply to the artifacts given; the sequence is always recomputed."""
    fresh = compute_sequences(sys)
    out = sequence_checks(sys, fresh)
    if seq is not None:
        same = fresh.delta_dims == seq.delta_dims and fresh.D_dims == seq.D_dims
        out.append(CheckResult("recorded dimensions reproduce", same, f"{seq.delta_dims} vs {fresh.delta_dims}"))
    if final is not None:
        replayed, rt = replay(sys, final.changes)
        out += rt
        same = replayed.states == final.system.states and all(
            (a - b).is_zero() for a, b in zip(replayed.f, final.system.f)
        )
        out.append(CheckResult("replayed ledger gives the reported normal form", same))
        seq_final = compute_sequences(replayed)
        out += delta_straight_checks(replayed, final.level, seq_final)
        out += d_straight_checks(seq_final, final.zpart)
        out += triangular_checks(TriangularForm(replayed, final.level, final.zpart, final.changes, final.flat_output))
    if param is not None:
        chk = verify_parameterization(sys, param)
        bad = [n for n, r in chk.residuals if not r.is_zero()]
        out.append(CheckResult(f"parameterization residuals vanish ({chk.method})", chk.ok, ", ".join(bad)))
    return out
