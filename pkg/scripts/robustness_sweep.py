#!/usr/bin/env python3
"""Phase-noise robustness sweep of a netlist after variation-aware retraining.

Loads a searched netlist, retrains its continuous parameters with noise
injected into the phases, and reports the task metric across a sigma grid.

Usage:
    python3 scripts/robustness_sweep.py --netlist out/net.json --seed 0
"""
import argparse

import numpy as np

from ptcsearch import MatrixFitTask, NoiseModel
from ptcsearch.netlist import doc_to_topology, read_netlist
from ptcsearch.tasks import random_unitary, robustness_sweep, variation_aware_train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--netlist", required=True)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--sigma-grid", default="0,0.01,0.02,0.04,0.08")
    parser.add_argument("--train-sigma", type=float, default=0.02)
    parser.add_argument("--train-steps", type=int, default=300)
    parser.add_argument("--trials", type=int, default=20)
    args = parser.parse_args()

    topology = doc_to_topology(read_netlist(args.netlist))
    rng = np.random.default_rng(args.seed)
    task = MatrixFitTask(random_unitary(topology.k,
                                        np.random.default_rng(args.seed + 1)))
    noise = NoiseModel(phase_sigma=args.train_sigma)
    mesh, metrics = variation_aware_train(topology, task, noise,
                                          steps=args.train_steps, rng=rng)
    print(f"# clean={metrics['clean']:.6f} noisy={metrics['noisy']:.6f}")
    sigmas = [float(s) for s in args.sigma_grid.split(",")]
    print("sigma,mean_metric,std_metric")
    for sigma, mean, std in robustness_sweep(mesh, task, sigmas,
                                             max(2, args.trials), rng):
        print(f"{sigma},{mean:.6f},{std:.6f}")


if __name__ == "__main__":
    main()
