"""JSON reports and their text rendering.

Every expression is written in the input grammar, so a report can be read
back (``load_ledger``) and replayed. The text form is produced from the JSON
alone. Reports carry no timings, so identical runs give identical bytes.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Any, Sequence

from .diffgeo import Distribution, VectorField
from .flattest import CheckResult, SequenceResult
from .normalform import CoordChange, NormalFormResult, Parameterization, ParameterizationCheck, TriangularForm, ZPartition
from .symkernel import Var, parse, to_str
from .system import DiscreteSystem

REPORT_KEYS = ("system", "verdicts", "sequences", "changes", "zpartition", "normal_form", "flat_output",
               "parameterization", "checks", "meta")


def _field(v: VectorField) -> dict[str, str]:
    return {c.display: to_str(v.coeffs[c]) for c in v.chart.coords if c in v.coeffs}


def _dist(d: Distribution) -> list[dict[str, str]]:
    return [_field(g) for g in d.generators]


def _var(v: Var) -> dict[str, str]:
    return {"name": v.name, "kind": v.kind}


def system_json(sys: DiscreteSystem) -> dict:
    return {
        "name": sys.name,
        "states": [s.name for s in sys.states],
        "inputs": [u.name for u in sys.inputs],
        "equilibrium": {v.name: str(c) for v, c in sys.working_point.items()},
        "equations": {s.name: to_str(e) for s, e in zip(sys.states, sys.f)},
    }


def sequences_json(seq: SequenceResult) -> dict:
    steps = []
    for k in range(seq.kbar):
        steps.append({"k": k, "E": _dist(seq.E[k]), "D": _dist(seq.D[k]), "Delta_next": _dist(seq.Delta[k])})
    return {
        "delta_dims": list(seq.delta_dims),
        "D_dims": list(seq.D_dims),
        "E_dims": list(seq.E_dims),
        "first_strict_step": seq.first_strict_step(),
        "steps": steps,
        "audit": [
            {"k": a["k"], "dim_E": a["dim_E"], "dim_D": a["dim_D"], "rejected_candidates": a["rejected_candidates"]}
            for a in seq.audit
        ],
    }


def change_json(ch: CoordChange) -> dict:
    return {
        "label": ch.label,
        "kind": ch.kind,
        "structure_preserving": ch.structure_preserving,
        "old_coords": [_var(v) for v in ch.old_coords],
        "new_coords": [_var(v) for v in ch.new_coords],
        "forward": {v.name: to_str(e) for v, e in ch.forward.items()},
        "inverse": {v.name: to_str(e) for v, e in ch.inverse.items()},
    }


def zpartition_json(tf: TriangularForm, nf: NormalFormResult) -> dict:
    out = tf.zpart.describe()
    out["levels"] = {s.name: tf.level[s] for s in tf.system.states}
    out["steps"] = [
        {
            "k": st.k,
            "case": st.case,
            "replaced": st.replaced.display if st.replaced else None,
            "new_var": st.new_var.display if st.new_var else None,
            "first_integral": to_str(st.integral) if st.integral is not None else None,
        }
        for st in nf.dstraight.steps
    ]
    return out


def parameterization_json(p: Parameterization, chk: ParameterizationCheck) -> dict:
    return {
        "outputs": [y.name for y in p.outputs],
        "R": list(p.R),
        "Fx": {v.name: to_str(e) for v, e in p.Fx.items()},
        "Fu": {v.name: to_str(e) for v, e in p.Fu.items()},
        "verification": {
            "ok": chk.ok,
            "method": chk.method,
            "residuals": {n: to_str(r) for n, r in chk.residuals},
        },
    }


def checks_json(checks: Sequence[CheckResult]) -> list[dict]:
    return [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks]


def build_report(
    sys: DiscreteSystem,
    command: str,
    meta: dict,
    seq: SequenceResult | None = None,
    nf: NormalFormResult | None = None,
    param: tuple[Parameterization, ParameterizationCheck] | None = None,
    checks: Sequence[CheckResult] = (),
    error: str | None = None,
) -> dict:
    rep: dict[str, Any] = {k: None for k in REPORT_KEYS}
    rep["system"] = system_json(sys)
    if seq is not None:
        rep["verdicts"] = {"flat": seq.flat, "sfl": seq.sfl, "kbar": seq.kbar}
        rep["sequences"] = sequences_json(seq)
    if nf is not None:
        final = nf.final
        rep["changes"] = [change_json(c) for c in final.changes]
        rep["zpartition"] = zpartition_json(final, nf)
        rep["normal_form"] = {
            "system": system_json(final.system),
            "equations": final.equations(),
            "redundancy_eliminated": final.redundancy_eliminated,
            "redundant_level": final.redundant_level,
        }
        rep["flat_output"] = [
            {"name": f"y{j}", "expr": to_str(e), "var": v.name}
            for j, (e, v) in enumerate(zip(nf.flat_output, final.flat_output), start=1)
        ]
    if param is not None:
        rep["parameterization"] = parameterization_json(*param)
    rep["checks"] = checks_json(checks)
    rep["meta"] = {"command": command, **meta}
    if error is not None:
        rep["meta"]["error"] = error
    return rep


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def schema() -> dict:
    return json.loads(resources.files("flatnf").joinpath("report.schema.json").read_text())


def validate(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, schema())


# --- reading a report back ----------------------------------------------------


def _vars(items: Sequence[dict]) -> list[Var]:
    return [Var(d["name"], d["kind"]) for d in items]


def change_from_json(d: dict) -> CoordChange:
    old = _vars(d["old_coords"])
    new = _vars(d["new_coords"])
    by_name = {v.name: v for v in old + new}
    declared = list(by_name.values())
    fwd = {by_name[k]: parse(e, declared) for k, e in d["forward"].items()}
    inv = {by_name[k]: parse(e, declared) for k, e in d["inverse"].items()}
    return CoordChange(fwd, inv, d["kind"], d["structure_preserving"], tuple(old), tuple(new), d.get("label", ""))


def load_ledger(report: dict) -> tuple[DiscreteSystem, TriangularForm]:
    """The original system and the recorded triangular form, rebuilt from a report."""
    from .sysfile import system_from_json

    sys = system_from_json(report["system"])
    changes = [change_from_json(c) for c in report["changes"]]
    nf = report["normal_form"]["system"]
    final_vars = {v.name: v for c in changes for v in c.new_coords}
    final_sys = system_from_json(nf)
    zp = report["zpartition"]

    def look(name: str) -> Var:
        return final_vars.get(name) or next(v for v in final_sys.xu if v.name == name)

    zpart = ZPartition(
        [[look(n) for n in b] for b in zp["z"]],
        [look(c) if c else None for c in zp["complements"]],
        [[look(n) for n in b] for b in zp["xhat"]],
    )
    level = {look(n): l for n, l in zp["levels"].items()}
    flat = [look(y["var"]) for y in report.get("flat_output") or []]
    return sys, TriangularForm(final_sys, level, zpart, changes, flat)


# --- text rendering -----------------------------------------------------------


def render_text(rep: dict) -> str:
    """Deterministic human-readable rendering of a report dict."""
    out: list[str] = []
    s = rep["system"]
    out.append(f"system {s['name']}: {len(s['states'])} states, {len(s['inputs'])} inputs")
    if rep["meta"].get("error"):
        out.append(f"error: {rep['meta']['error']}")
    v = rep.get("verdicts")
    if v:
        out.append(f"flat: {'yes' if v['flat'] else 'no'}   static feedback linearizable: {'yes' if v['sfl'] else 'no'}   kbar = {v['kbar']}")
    seq = rep.get("sequences")
    if seq:
        out.append("dims Delta: " + ", ".join(map(str, seq["delta_dims"])))
        out.append("dims D:     " + ", ".join(map(str, seq["D_dims"])))
        out.append("dims E:     " + ", ".join(map(str, seq["E_dims"])))
        for st in seq["steps"]:
            k = st["k"]
            out.append(f"  D_{k} = {_span_text(st['D'])}")
            out.append(f"  E_{k} = {_span_text(st['E'])}")
            out.append(f"  Delta_{k + 1} = {_span_text(st['Delta_next'])}")
    if rep.get("changes") is not None:
        out.append("coordinate changes:")
        for i, c in enumerate(rep["changes"]):
            tag = "structure preserving" if c["structure_preserving"] else "general"
            out.append(f"  [{i}] {c['label']} ({c['kind']}, {tag})")
            for name, e in c["forward"].items():
                out.append(f"      {name} = {e}")
    z = rep.get("zpartition")
    if z:
        out.append("steps: " + ", ".join(f"k={st['k']} case {st['case']}" for st in z["steps"]))
        for st in z["steps"]:
            if st["first_integral"]:
                out.append(f"  k={st['k']}: {st['new_var']} = {st['first_integral']} replaces {st['replaced']}")
        for k, b in enumerate(z["z"]):
            out.append(f"  z_{k} = ({', '.join(b)})")
    nf = rep.get("normal_form")
    if nf:
        out.append("normal form:")
        out += [f"  {e}" for e in nf["equations"]]
    if rep.get("flat_output"):
        out.append("flat output:")
        out += [f"  {y['name']} = {y['expr']}" for y in rep["flat_output"]]
    p = rep.get("parameterization")
    if p:
        out.append("parameterization (y_sK is y shifted K steps):")
        for name, e in list(p["Fx"].items()) + list(p["Fu"].items()):
            out.append(f"  {name} = {e}")
        out.append("  R = (" + ", ".join(map(str, p["R"])) + ")")
        ver = p["verification"]
        out.append(f"  verification: {'ok' if ver['ok'] else 'FAILED'} ({ver['method']})")
    if rep.get("checks"):
        failed = [c for c in rep["checks"] if not c["passed"]]
        out.append(f"checks: {len(rep['checks']) - len(failed)}/{len(rep['checks'])} passed")
        for c in failed:
            out.append(f"  FAIL {c['name']}" + (f": {c['detail']}" if c["detail"] else ""))
    return "\n".join(out) + "\n"


def _span_text(gens: Sequence[dict]) -> str:
    parts = []
    for g in gens:
        terms = [f"({e})*d_{c}" if e != "1" else f"d_{c}" for c, e in g.items()]
        parts.append(" + ".join(terms) or "0")
    return "span{" + ", ".join(parts) + "}"
