#!/usr/bin/env python3
"""Desk-scale reproduction of the violation-gap experiments: train the
compiled model and the soft baselines on one constraint system and compare
mean violation / element deviation on held-out initial conditions.

Usage:
    python scripts/run_violation_gap.py --system sir --epochs 300
    python scripts/run_violation_gap.py --system nox --baseline penalty
"""

import argparse
import shutil
import tempfile
from pathlib import Path

from invarc import cli

SPECS = Path(__file__).parent.parent / "specs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--system", default="sir", choices=["sir", "nox", "chemical", "replicator"])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--baseline", default="none", choices=["none", "penalty", "pinns"])
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix=f"invarc_{args.system}_"))
    spec = SPECS / f"{args.system}.ivc"
    runs = {}
    for label, baseline in (("compiled", None), ("baseline", args.baseline)):
        run_dir = out / label
        argv = [
            "train", "--spec", str(spec), "--seed", str(args.seed),
            "--epochs", str(args.epochs), "--batch-size", "256",
            "--window-stride", "3", "--out", str(run_dir),
        ]
        if baseline is not None:
            argv += ["--baseline", baseline]
        assert cli.main(argv) == 0
        assert cli.main(["eval", "--run", str(run_dir), "--horizon-mult", "2", "--n-eval", "10"]) == 0
        runs[label] = run_dir

    cli.main(["report", str(runs["compiled"]), str(runs["baseline"]), "--out", str(out / "comparison.csv")])
    print(f"\ncomparison table: {out / 'comparison.csv'}")
    print((out / "comparison.csv").read_text())


if __name__ == "__main__":
    main()
