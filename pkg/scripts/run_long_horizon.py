#!/usr/bin/env python3
"""Single-trajectory long-horizon study: train on one trajectory and compare
energy/entropy deviation at 2x, 5x, and 10x the training horizon.

Usage:
    python scripts/run_long_horizon.py --system lotka_volterra
    python scripts/run_long_horizon.py --system thermomechanical --baseline pinns
"""

import argparse
import tempfile
from pathlib import Path

from invarc import cli

SPECS = Path(__file__).parent.parent / "specs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument(
        "--system", default="lotka_volterra",
        choices=["lotka_volterra", "damped_oscillator", "thermomechanical", "extended_pendulum"],
    )
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--baseline", default="none", choices=["none", "pinns"])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix=f"invarc_{args.system}_"))
    spec = SPECS / f"{args.system}.ivc"
    runs = []
    for label, baseline in (("compiled", None), ("baseline", args.baseline)):
        run_dir = out / label
        argv = [
            "train", "--spec", str(spec), "--seed", str(args.seed),
            "--epochs", str(args.epochs), "--batch-size", "256", "--out", str(run_dir),
        ]
        if baseline is not None:
            argv += ["--baseline", baseline]
        assert cli.main(argv) == 0
        assert cli.main([
            "eval", "--run", str(run_dir), "--horizon-mult", "2", "5", "10", "--n-eval", "5",
        ]) == 0
        runs.append(run_dir)

    cli.main(["report", *map(str, runs), "--out", str(out / "comparison.csv")])
    print(f"\ncomparison table: {out / 'comparison.csv'}")
    print((out / "comparison.csv").read_text())


if __name__ == "__main__":
    main()
