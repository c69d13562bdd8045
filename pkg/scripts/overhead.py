"""Defense wall-clock against training wall-clock on probe rounds.

    python scripts/overhead.py --freeriders 0 2 5 --probe-sizes 100 500 2000
"""

import argparse

import numpy as np

from mdgan_sim.config import ExperimentConfig
from mdgan_sim.sim import run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--freeriders", type=int, nargs="+", default=[0, 5])
    p.add_argument("--probe-sizes", type=int, nargs="+", default=[500])
    p.add_argument("--defense", default="dfg", choices=["dfg", "dfg_adj"])
    p.add_argument("--rounds", type=int, default=50)
    args = p.parse_args()

    print(f"{'k':>2} {'probe':>6} {'defense_ms':>10} {'train_ms':>9} {'ratio':>7}")
    for k in args.freeriders:
        for size in args.probe_sizes:
            cfg = ExperimentConfig(n_freeriders=k, probe_size=size, defense=args.defense, rounds=args.rounds)
            res = run_experiment(cfg)
            probes = [log for log in res.round_logs if log.round % cfg.probe_period == 0]
            d = np.median([log.defense_ms for log in probes])
            t = np.median([log.train_ms for log in probes])
            ratio = np.median([log.defense_ms / log.train_ms for log in probes])
            print(f"{k:>2} {size:>6} {d:10.2f} {t:9.2f} {ratio:7.4f}")


if __name__ == "__main__":
    main()
