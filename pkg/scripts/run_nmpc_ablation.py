#!/usr/bin/env python3
"""Closed-loop ablation on the stadium track.

Runs the receding-horizon controller for --loops circuits under all four
configurations (stochastic bounds and feedback toggled independently) and
writes per-interval logs plus the comparison table under --out.
"""

import argparse
import sys

from pacmpc.cli import main as pacmpc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="bicycle_nmpc_loop")
    ap.add_argument("--out", default="results/ablation")
    ap.add_argument("--loops", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--mc-samples", type=int, default=1024)
    args = ap.parse_args()

    cmd = ["ablate", args.scenario, "--out", args.out,
           "--loops", str(args.loops), "--mc-samples", str(args.mc_samples)]
    if args.seed is not None:
        cmd += ["--seed", str(args.seed)]
    print("+ pacmpc " + " ".join(cmd))
    sys.exit(pacmpc(cmd))


if __name__ == "__main__":
    main()
