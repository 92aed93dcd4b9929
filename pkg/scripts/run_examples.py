"""Run the command line tool over every fixture and summarize exit codes.

    python scripts/run_examples.py [--json-dir out/]
"""

import argparse
import contextlib
import io
from pathlib import Path

from flatnf.cli import main as cli

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--json-dir", default=None, help="save each parameterize report here")
    args = ap.parse_args()
    out_dir = Path(args.json_dir) if args.json_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for path in sorted(FIXTURES.glob("*.sys")):
        codes = {}
        for cmd in ("check", "parameterize", "verify"):
            buf, err = io.StringIO(), io.StringIO()
            argv = [cmd, str(path)] + (["--json"] if cmd == "parameterize" and out_dir else [])
            with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(err):
                codes[cmd] = cli(argv)
            if cmd == "parameterize" and out_dir and buf.getvalue():
                (out_dir / f"{path.stem}.json").write_text(buf.getvalue())
            if cmd == "check" and err.getvalue():
                codes["note"] = err.getvalue().strip().splitlines()[0]
        note = codes.pop("note", "")
        print(f"{path.name:18s} " + "  ".join(f"{k}={v}" for k, v in codes.items()) + (f"  ({note})" if note else ""))


if __name__ == "__main__":
    main()
