"""Round-trip experiment on random flat two-input systems.

    python scripts/roundtrip.py --seeds 0:50 --max-degree 3 --out roundtrip.jsonl
"""

import argparse
import json
import time

from flatnf.firstint import AnsatzExhausted
from flatnf.flattest import compute_sequences
from flatnf.normalform import build_parameterization, normal_form, verify_parameterization
from flatnf.randsys import RandomSystemConfig, oracle_parameterization, random_flat_system
from flatnf.symkernel import to_str


def one(seed, cfg, max_degree):
    gen = random_flat_system(seed, cfg)
    row = {"seed": seed, "n": gen.system.n, "generated_levels": max(gen.level.values())}
    row["oracle_ok"] = verify_parameterization(gen.system, oracle_parameterization(gen)).ok
    t = time.perf_counter()
    try:
        seq = compute_sequences(gen.system)
        row["delta_dims"] = list(seq.delta_dims)
        row["flat"] = seq.flat
        nf = normal_form(gen.system, seq, max_degree)
        chk = verify_parameterization(gen.system, build_parameterization(nf.final, gen.system))
        row.update(ok=chk.ok, method=chk.method, flat_output=[to_str(e) for e in nf.flat_output])
    except AnsatzExhausted as exc:
        row.update(ok=False, error=f"AnsatzExhausted: {exc}")
    except Exception as exc:
        row.update(ok=False, error=f"{type(exc).__name__}: {exc}")
    row["seconds"] = round(time.perf_counter() - t, 3)
    return row


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0:50", help="start:stop")
    ap.add_argument("--max-degree", type=int, default=3)
    ap.add_argument("--max-levels", type=int, default=3)
    ap.add_argument("--max-states", type=int, default=6)
    ap.add_argument("--out", default=None, help="write one JSON line per seed")
    args = ap.parse_args()
    lo, hi = map(int, args.seeds.split(":"))
    cfg = RandomSystemConfig(max_levels=args.max_levels, max_states=args.max_states)
    rows = []
    for seed in range(lo, hi):
        row = one(seed, cfg, args.max_degree)
        rows.append(row)
        print(f"{seed:4d}  n={row['n']}  {'ok' if row['ok'] else 'FAIL'}  {row['seconds']:.2f}s  "
              + (row.get("error") or ", ".join(row.get("flat_output", []))), flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    good = sum(r["ok"] for r in rows)
    print(f"{good}/{len(rows)} verified, {sum(r['seconds'] for r in rows):.1f}s in the pipeline")


if __name__ == "__main__":
    main()
