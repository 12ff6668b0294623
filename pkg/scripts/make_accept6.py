"""Run the 10-replicate ablation experiment and cache the final LOD agents.

Each replicate evolves 5,000 generations (population 100, all gate kinds,
32x32 worlds, start distance 16, 256 steps).  The final line-of-descent
agent of each replicate is written to tests/data/accept6/repNN.json so the
ablation acceptance test can load it instead of re-running the experiment.

Usage:  python scripts/make_accept6.py [--reps 10] [--out tests/data/accept6]
"""

import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mazebrain.evolution import RunConfig, read_lod, run_evolution  # noqa: E402

N_REPS = 10


def replicate_config(rep):
    return RunConfig(population=100, generations=5000, world_size=32,
                     start_distance=16, steps=256, gates="dpf",
                     seed=101 + rep, snapshot_interval=0)


def run_replicate(rep, run_root):
    cfg = replicate_config(rep)
    run = run_evolution(cfg, os.path.join(run_root, f"rep{rep:02d}"))
    records, mrca = read_lod(run.lod)
    final = records[-1]
    return {
        "rep": rep,
        "seed": cfg.seed,
        "generations": cfg.generations,
        "genome_hex": final["genome_hex"],
        "n_det": final["n_det"],
        "n_prob": final["n_prob"],
        "n_fb": final["n_fb"],
        "mean_goals": final["mean_goals"],
        "mrca": mrca if mrca is not None else -1,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=N_REPS)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__),
                                                  "..", "tests", "data", "accept6"))
    ap.add_argument("--runs", default="/tmp/accept6_runs",
                    help="scratch directory for full run output")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for rep in range(args.reps):
        dest = os.path.join(args.out, f"rep{rep:02d}.json")
        if os.path.exists(dest):
            print(f"rep {rep}: cached, skipping")
            continue
        t0 = time.time()
        record = run_replicate(rep, args.runs)
        with open(dest, "w") as fh:
            json.dump(record, fh, indent=1)
        print(f"rep {rep}: {time.time() - t0:.0f} s, "
              f"mean goals {record['mean_goals']:.2f}, n_fb {record['n_fb']}")


if __name__ == "__main__":
    main()
