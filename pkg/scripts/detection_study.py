"""How often each detector gets a probe round exactly right.

For every free-rider count and seed, runs the simple protocol with DFG (the
detector-free ablation is scored on the same responses) and the swap protocol
with the client-side gate, then reports:

- dfg / adj: share of probe rounds with precision = recall = 1
- gate: share of (probe round, benign client) gates that hold exactly the
  other benign clients
- wrong_perm: mean final wrong-permission fraction under the gate

    python scripts/detection_study.py --seeds 5
"""

import argparse

import numpy as np

from mdgan_sim.config import ExperimentConfig
from mdgan_sim.metrics import precision_recall
from mdgan_sim.sim import run_experiment


def perfect(det, truth) -> bool:
    return precision_recall(det.flagged, truth) == (1.0, 1.0)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--counts", default="1,2,3,4,5")
    p.add_argument("--rounds", type=int, default=100)
    args = p.parse_args()

    print(f"{'k':>2} {'dfg':>6} {'adj':>6} {'gate':>6} {'wrong_perm':>10}")
    for k in (int(c) for c in args.counts.split(",")):
        dfg_hits, adj_hits, gate_hits, perms = [], [], [], []
        for s in range(args.seeds):
            res = run_experiment(ExperimentConfig(n_freeriders=k, defense="dfg", rounds=args.rounds, seed=s))
            dfg_hits += [perfect(d, res.freeriders) for d in res.detections.values()]
            adj_hits += [perfect(d, res.freeriders) for d in res.adj_detections.values()]

            res = run_experiment(ExperimentConfig(n_freeriders=k, protocol="swap", defense="dfg_plus",
                                                  rounds=args.rounds, seed=s))
            benign = set(range(res.config.n_clients)) - res.freeriders
            for log in res.round_logs:
                for cid, allowed in (log.gates or {}).items():
                    gate_hits.append(set(allowed) == benign - {cid})
            perms.append(res.metrics[-1].wrong_permission_frac or 0.0)
        print(f"{k:>2} {np.mean(dfg_hits):6.2f} {np.mean(adj_hits):6.2f} {np.mean(gate_hits):6.2f} "
              f"{np.mean(perms):10.3f}")


if __name__ == "__main__":
    main()
