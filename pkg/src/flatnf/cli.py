"""Command line entry point.

    flatnf check|normalform|parameterize|verify FILE [--json] [--max-degree D]
           [--seed S] [--trials T] [--force-multi]

Exit status: 0 flat / success, 1 definite negative (not flat, failed check),
2 error or unsupported input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys as _sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .firstint import AnsatzExhausted
from .flattest import compute_sequences, sequence_checks
from .invariants import invariant_suite
from .normalform import PreconditionError, build_parameterization, normal_form, verify_parameterization
from .report import build_report, dumps, load_ledger, render_text
from .symkernel import ParseError, SolveError, set_rank_config
from .symkernel.linalg import reset_rank_config
from .sysfile import SystemFileError, load_system
from .system import RankDeficientSystem

EXIT_OK, EXIT_NEGATIVE, EXIT_ERROR = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    command: str
    path: str
    as_json: bool = False
    max_degree: int = 3
    seed: int = 0
    trials: int = 5
    force_multi: bool = False

    def meta(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "max_degree": self.max_degree,
            "force_multi": self.force_multi,
            "version": __version__,
            "source": self.path,
            "validity": "local, generic point",
        }


class Failure(Exception):
    """An error that still carries whatever was computed before it."""

    def __init__(self, message: str, parts: dict):
        super().__init__(message)
        self.parts = parts


def _load(cfg: RunConfig):
    text = Path(cfg.path).read_text()
    if cfg.path.endswith(".json") and '"changes"' in text:
        report = json.loads(text)
        if report.get("changes") is not None:
            return load_ledger(report)
    return load_system(cfg.path), None


def _run(cfg: RunConfig) -> tuple[dict, int]:
    sys, recorded = _load(cfg)
    if cfg.command == "verify" and recorded is not None:
        checks = invariant_suite(sys, None, recorded)
        rep = build_report(sys, "verify", cfg.meta(), checks=checks)
        return rep, EXIT_OK if all(c.passed for c in checks) else EXIT_NEGATIVE

    seq = compute_sequences(sys)
    if cfg.command == "check":
        rep = build_report(sys, "check", cfg.meta(), seq=seq, checks=sequence_checks(sys, seq))
        return rep, EXIT_OK if seq.flat else EXIT_NEGATIVE

    if not seq.flat:
        checks = sequence_checks(sys, seq)
        rep = build_report(sys, cfg.command, cfg.meta(), seq=seq, checks=checks)
        if cfg.command == "verify":
            return rep, EXIT_OK if all(c.passed for c in checks) else EXIT_NEGATIVE
        rep["meta"]["error"] = "the system is not flat"
        return rep, EXIT_NEGATIVE

    if sys.m > 2 and not cfg.force_multi:
        if cfg.command == "verify":
            checks = sequence_checks(sys, seq)
            rep = build_report(sys, "verify", cfg.meta(), seq=seq, checks=checks)
            return rep, EXIT_OK if all(c.passed for c in checks) else EXIT_NEGATIVE
        raise Failure(
            f"the triangular construction handles at most two inputs (m = {sys.m}); pass --force-multi to attempt it",
            {"sys": sys, "seq": seq},
        )

    try:
        nf = normal_form(sys, seq, cfg.max_degree, cfg.force_multi)
    except Exception as exc:
        raise Failure(f"{type(exc).__name__}: {exc}", {"sys": sys, "seq": seq}) from exc
    param = None
    if cfg.command in ("parameterize", "verify"):
        try:
            p = build_parameterization(nf.final, sys)
        except Exception as exc:
            raise Failure(f"{type(exc).__name__}: {exc}", {"sys": sys, "seq": seq, "nf": nf}) from exc
        param = (p, verify_parameterization(sys, p))
    checks = invariant_suite(sys, seq, nf.final, param[0] if param else None)
    rep = build_report(sys, cfg.command, cfg.meta(), seq=seq, nf=nf, param=param, checks=checks)
    ok = all(c.passed for c in checks)
    if cfg.command == "verify":
        return rep, EXIT_OK if ok else EXIT_NEGATIVE
    if not ok:
        rep["meta"]["error"] = "internal invariant check failed"
        return rep, EXIT_ERROR
    return rep, EXIT_OK


def run(cfg: RunConfig) -> tuple[dict, int]:
    """Report dict and exit status."""
    token = set_rank_config(cfg.seed, cfg.trials)
    try:
        return _run(cfg)
    except Failure as exc:
        p = exc.parts
        rep = build_report(p["sys"], cfg.command, cfg.meta(), seq=p.get("seq"), nf=p.get("nf"), error=str(exc))
        return rep, EXIT_ERROR
    finally:
        reset_rank_config(token)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatnf", description="Flatness test and triangular normal form for x+ = f(x, u).")
    ap.add_argument("command", choices=["check", "normalform", "parameterize", "verify"])
    ap.add_argument("file", help="system file, JSON system, or a JSON report (verify only)")
    ap.add_argument("--json", action="store_true", help="print the JSON report")
    ap.add_argument("--max-degree", type=int, default=3, help="degree bound for first-integral ansatz")
    ap.add_argument("--seed", type=int, default=0, help="seed for sampled rank checks")
    ap.add_argument("--trials", type=int, default=5, help="sample points per rank check")
    ap.add_argument("--force-multi", action="store_true", help="attempt the construction for more than two inputs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.max_degree < 1 or args.trials < 1:
        print("flatnf: --max-degree and --trials must be positive", file=_sys.stderr)
        return EXIT_ERROR
    cfg = RunConfig(args.command, args.file, args.json, args.max_degree, args.seed, args.trials, args.force_multi)
    try:
        rep, code = run(cfg)
    except (OSError, SystemFileError, ParseError, RankDeficientSystem, PreconditionError, SolveError,
            AnsatzExhausted, json.JSONDecodeError, KeyError, ValueError) as exc:
        msg = str(exc)
        if isinstance(exc, AnsatzExhausted) and "max-degree" not in msg:
            msg += "; try a larger --max-degree"
        print(f"flatnf: {type(exc).__name__}: {msg}", file=_sys.stderr)
        if isinstance(exc, RankDeficientSystem):
            print(f"  jacobian: {exc.jacobian}", file=_sys.stderr)
        return EXIT_ERROR
    _sys.stdout.write(dumps(rep) if cfg.as_json else render_text(rep))
    if code == EXIT_ERROR and rep["meta"].get("error"):
        print(f"flatnf: {rep['meta']['error']}", file=_sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
