#!/usr/bin/env python3
"""Two-body composability study: known momentum gradients plus learned
integrals in one projected field. Reports momentum deviation (architectural)
and learned-integral drift before and after training.

Usage: python scripts/run_composability.py [--epochs 300] [--n-traj 40]
"""

import argparse

import numpy as np

from invarc import compiler, metrics, nets, systems, training
from invarc.constructions.base import rollout_model
from pathlib import Path

SPECS = Path(__file__).parent.parent / "specs"


def momentum_deviation(model, store, sys_def, ics, mult=2):
    params = nets.bind(store)
    n_steps = (sys_def.points - 1) * mult
    devs = []
    for x0 in ics:
        traj = rollout_model(model, params, x0, sys_def.h, n_steps)
        for name in ("px", "py"):
            series = np.asarray(sys_def.invariant(name)(traj.states))
            devs.append(metrics.deviation(series, np.zeros_like(series), traj.times))
    return float(np.mean(devs))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--n-traj", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = compiler.parse_spec((SPECS / "two_body.ivc").read_text())
    ir = compiler.lower(spec)
    sys_def = systems.get_system("two_body")
    rng = np.random.default_rng(779)
    ics = [sys_def.ic_sampler(rng) for _ in range(5)]

    cf = compiler.build_model(ir, args.seed + 1)
    print(f"untrained momentum deviation: {momentum_deviation(cf.model, cf.store, sys_def, ics):.3e}")

    dataset, _ = systems.generate_dataset("two_body", args.n_traj, seed=args.seed)
    cfg = training.TrainConfig(epochs=args.epochs, seed=args.seed, batch_size=256, window_stride=3)
    result = training.train(cf.model, dataset, cfg, store=cf.store)
    print(f"final loss: {result.loss_curve[-1]:.3e}")
    print(f"trained momentum deviation:  {momentum_deviation(cf.model, result.store, sys_def, ics):.3e}")

    params = nets.bind(result.store)
    worst = 0.0
    for x0 in ics:
        traj = rollout_model(cf.model, params, x0, sys_def.h, (sys_def.points - 1) * 2, with_diagnostics=True)
        for name in ("v0_drift", "v1_drift"):
            worst = max(worst, float(traj.diagnostics[name].max()))
    print(f"learned-integral drift:      {worst:.3e}")


if __name__ == "__main__":
    main()
