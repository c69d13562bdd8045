"""Final Fréchet distance versus free-rider count, with and without defenses.

Runs both protocols through ``run_sweep`` and prints one table row per
(protocol, defense, count) cell. Per-run files land under ``--out``.

    python scripts/trend_table.py --seeds 3 --out runs/trend
"""

import argparse
from pathlib import Path

from mdgan_sim.cli import parse_config, parse_counts, run_sweep

PLAN = {"simple": ["none", "dfg", "dfg_adj"], "swap": ["none", "dfg_plus"]}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--freeriders", default="0..5")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", default="runs/trend")
    args = p.parse_args()

    counts = parse_counts(args.freeriders)
    print(f"{'protocol':8} {'defense':9} {'k':>2} {'fd':>9} {'prec':>6} {'rec':>6} {'wrong_perm':>10}")
    for protocol, defenses in PLAN.items():
        base = parse_config(args.config, {"protocol": protocol, "rounds": args.rounds})
        rows = run_sweep(base, counts, list(range(args.seeds)), Path(args.out) / protocol, defenses)
        for r in rows:
            def f(key, width, spec=".3f"):
                v = r[key]
                return f"{'-':>{width}}" if v is None else f"{v:>{width}{spec}}"
            print(f"{protocol:8} {r['defense']:9} {r['n_freeriders']:>2} {f('mean_final_fd', 9)} "
                  f"{f('mean_precision', 6, '.2f')} {f('mean_recall', 6, '.2f')} "
                  f"{f('mean_wrong_permission_frac', 10)}")


if __name__ == "__main__":
    main()
