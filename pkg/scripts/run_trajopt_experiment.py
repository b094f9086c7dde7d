#!/usr/bin/env python3
"""Reproduce the single-plan rally-car experiment.

Optimizes the 20-step bicycle scenario without and with feedback, writes
iteration logs, sampled rollouts, and certified bounds under --out, then
re-validates each stored certificate with fresh Monte Carlo rollouts.
"""

import argparse
import os
import sys

from pacmpc.cli import main as pacmpc


def run(argv):
    print("+ pacmpc " + " ".join(argv))
    rc = pacmpc(argv)
    if rc != 0:
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/trajopt")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--mc-samples", type=int, default=1024)
    args = ap.parse_args()

    for label, scenario in (("open_loop", "bicycle_trajopt"),
                            ("feedback", "bicycle_trajopt_feedback")):
        out = os.path.join(args.out, label)
        cmd = ["optimize", scenario, "--out", out,
               "--mc-samples", str(args.mc_samples)]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        run(cmd)
        cmd = ["validate", scenario, os.path.join(out, "hyperparams.json"),
               "--samples", str(args.mc_samples)]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed + 1)]
        run(cmd)


if __name__ == "__main__":
    main()
