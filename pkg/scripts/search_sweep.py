#!/usr/bin/env python3
"""Run seeded topology searches inside a footprint window and summarize the
discovered designs.

Usage:
    python3 scripts/search_sweep.py --seeds 10 --f-min 240000 --f-max 300000
"""
import argparse

import numpy as np

from ptcsearch import FootprintConstraint, MatrixFitTask, footprint_exact, load_pdk, run_search
from ptcsearch.search import SearchConfig, SearchSchedule
from ptcsearch.tasks import random_unitary


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--k", type=int, default=8)
    parser.add_argument("--pdk", default="amf")
    parser.add_argument("--f-min", type=float, default=240_000.0)
    parser.add_argument("--f-max", type=float, default=300_000.0)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--steps-per-epoch", type=int, default=2)
    args = parser.parse_args()

    pdk = load_pdk(args.pdk)
    config = SearchConfig(k=args.k, pdk=args.pdk,
                          constraint=FootprintConstraint(args.f_min, args.f_max))
    schedule = SearchSchedule(steps_per_epoch=args.steps_per_epoch)

    print("seed,task_loss,n_blk,n_dc,n_cr,footprint_um2,in_window")
    for seed in range(args.seeds):
        task = MatrixFitTask(random_unitary(args.k,
                                            np.random.default_rng(1000 + seed)))
        _, topo, logs = run_search(config, schedule, task,
                                   np.random.default_rng(seed))
        area = footprint_exact(topo, pdk)
        n_cr, n_dc, n_blk = topo.device_counts()
        in_window = config.constraint.contains(area)
        print(f"{seed},{logs[-1]['task']:.6f},{n_blk},{n_dc},{n_cr},"
              f"{area:.1f},{in_window}")


if __name__ == "__main__":
    main()
