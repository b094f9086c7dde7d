"""Command-line interface.

Subcommands:
  optimize   fixed-start trajectory-distribution optimization
  nmpc-sim   receding-horizon loop around a scenario route
  validate   Monte Carlo check of stored certified bounds
  ablate     nmpc-sim over the four feedback/bound-mode combinations

Exit codes: 0 success, 1 runtime failure (optimizer infeasibility, plant
divergence, bounds exceeded in validate), 2 bad arguments or scenario.
All file outputs are deterministic for a fixed scenario and seed when
--no-timing is passed; timing columns are then written as 0.0.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .nmpc import run_closed_loop
from .policy import PolicyHyperparams
from .rng import TAG_MC, TAG_PLOT, stream_key
from .rollout import mean_rollout_states, evaluate_batch
from .scenario import ScenarioError, builtin_scenario, list_builtin_scenarios, load_scenario
from .trajopt import evaluate_distribution, monte_carlo_estimate, trajectory_distribution_opt

HYPERPARAMS_SCHEMA_VERSION = 1


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_scenario_arg(arg):
    if os.path.exists(arg):
        return load_scenario(arg)
    if arg.endswith(".json"):
        raise ScenarioError(f": scenario file not found: {arg}")
    return builtin_scenario(arg)


def _apply_overrides(scenario, args):
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_seed(args.seed)
    fb = getattr(args, "feedback", None)
    sb = getattr(args, "stochastic_bounds", None)
    scenario = scenario.with_flags(
        feedback=None if fb is None else fb == "on",
        stochastic_bounds=None if sb is None else sb == "on")
    return scenario


def _positions(states):
    return [[p.tolist() for p in traj[:, :2]] for traj in states]


_ITER_HEADER = ["iteration", "alpha", "cost_bound", "constraint_bound",
                "objective", "cost_empirical", "cost_divergence",
                "constraint_empirical", "constraint_divergence", "confidence",
                "extreme_ratio_count", "mc_cost", "mc_violation", "wall_ms"]


def cmd_optimize(args):
    scenario = _apply_overrides(_load_scenario_arg(args.scenario), args)
    planner = scenario.planner
    iterations = planner.iterations if args.iterations is None else args.iterations
    seed = scenario.seed
    mode = "feedback" if scenario.feedback else "open_loop"
    started = time.perf_counter()

    prior_report, _ = evaluate_distribution(scenario.prior, scenario.start, scenario)
    prior_mc = monte_carlo_estimate(
        scenario.prior, scenario.start, scenario, args.mc_samples,
        seed=stream_key(seed, TAG_MC, 1_000_000), mode=mode)

    result = trajectory_distribution_opt(
        scenario.prior, scenario.start, scenario, iterations=iterations,
        mc_every=args.mc_every, mc_samples=args.mc_samples)

    final = result.hyperparams
    report = result.report if result.report is not None else prior_report
    mc_cost, mc_violation = monte_carlo_estimate(
        final, scenario.start, scenario, args.mc_samples,
        seed=stream_key(seed, TAG_MC, len(result.history)), mode=mode)
    wall_s = time.perf_counter() - started

    rows = [[0, prior_report.alpha, prior_report.cost_bound,
             prior_report.constraint_bound, prior_report.objective,
             prior_report.cost_empirical, prior_report.cost_divergence,
             prior_report.constraint_empirical, prior_report.constraint_divergence,
             prior_report.confidence, prior_report.extreme_ratio_count,
             prior_mc[0], prior_mc[1], 0.0]]
    for rec in result.history:
        rows.append([rec.iteration + 1, rec.alpha, rec.cost_bound,
                     rec.constraint_bound, rec.objective, rec.cost_empirical,
                     rec.cost_divergence, rec.constraint_empirical,
                     rec.constraint_divergence, rec.confidence,
                     rec.extreme_ratio_count, rec.mc_cost, rec.mc_violation,
                     rec.wall_ms if args.timing else 0.0])

    summary = {
        "scenario": scenario.name,
        "seed": seed,
        "feedback": scenario.feedback,
        "stochastic_bounds": scenario.stochastic_bounds,
        "iterations": len(result.history),
        "alpha": report.alpha,
        "cost_bound": report.cost_bound,
        "constraint_bound": report.constraint_bound,
        "objective": report.objective,
        "mc_cost": mc_cost,
        "mc_violation": mc_violation,
        "cost_bounded": mc_cost <= report.cost_bound,
        "violation_bounded": mc_violation <= report.constraint_bound,
        "warning": result.warning,
        "wall_s": wall_s if args.timing else 0.0,
    }

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "iterations.csv"), _ITER_HEADER, rows)
        _write_json(os.path.join(args.out, "hyperparams.json"), {
            "schema_version": HYPERPARAMS_SCHEMA_VERSION,
            "scenario": scenario.name,
            "seed": seed,
            "feedback": scenario.feedback,
            "stochastic_bounds": scenario.stochastic_bounds,
            "n_controls": final.n_controls,
            "n_timesteps": final.n_timesteps,
            "dt": planner.dt,
            "mean": final.mean.tolist(),
            "variance": final.variance.tolist(),
            "alpha": report.alpha,
            "delta": planner.delta,
            "gamma": planner.gamma,
            "cost_bound": report.cost_bound,
            "constraint_bound": report.constraint_bound,
        })
        n_plot = args.plot_samples if args.plot_samples is not None else planner.samples
        if n_plot > 0:
            _, _, _, dist_states = evaluate_batch(
                final, scenario.start, scenario, n_plot,
                stream_key(seed, TAG_PLOT, 0), mode=mode, return_states=True)
            mean_states = mean_rollout_states(
                final, scenario.start, scenario, n_plot,
                stream_key(seed, TAG_PLOT, 1), mode=mode)
            _write_json(os.path.join(args.out, "samples.json"), {
                "schema_version": 1,
                "start": scenario.start.tolist(),
                "goal": scenario.goal.tolist(),
                "obstacles": [{"center": c.tolist(), "radius": float(r)}
                              for c, r in zip(scenario.obstacles.centers,
                                              scenario.obstacles.radii)],
                "distribution_rollouts": _positions(dist_states),
                "mean_rollouts": _positions(mean_states),
            })
        _write_json(os.path.join(args.out, "summary.json"), summary)

    print(f"scenario={scenario.name} iterations={len(result.history)} "
          f"alpha={report.alpha:.6g}")
    print(f"cost bound={report.cost_bound:.6g} mc={mc_cost:.6g} "
          f"bounded={summary['cost_bounded']}")
    print(f"violation bound={report.constraint_bound:.6g} mc={mc_violation:.6g} "
          f"bounded={summary['violation_bounded']}")
    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)
        return 1
    return 0


_INTERVAL_HEADER_FIXED = ["interval", "time", "alpha", "cost_bound",
                          "constraint_bound", "mc_cost", "mc_violation",
                          "cost_bounded", "violation_bounded", "active_interval",
                          "collision", "iterations_run", "wall_ms", "warning"]


def _write_runlog(out, log, timing):
    S = log.states.shape[1]
    N = log.commands.shape[1]
    header = (_INTERVAL_HEADER_FIXED
              + [f"state_{i}" for i in range(S)]
              + [f"goal_{i}" for i in range(S)])
    rows = []
    for r in log.intervals:
        rows.append([r.interval, r.time, r.alpha, r.cost_bound,
                     r.constraint_bound, r.mc_cost, r.mc_violation,
                     r.cost_bounded, r.violation_bounded, r.active_interval,
                     r.collision, r.iterations_run,
                     r.wall_ms if timing else 0.0, r.warning or ""]
                    + list(r.state) + list(r.goal))
    _write_csv(os.path.join(out, "intervals.csv"), header, rows)

    path_header = ["step", "time"] + [f"state_{i}" for i in range(S)] \
        + [f"command_{i}" for i in range(N)]
    path_rows = []
    for k in range(log.commands.shape[0]):
        path_rows.append([k, log.times[k]] + list(log.states[k]) + list(log.commands[k]))
    _write_csv(os.path.join(out, "path.csv"), path_header, path_rows)
    _write_json(os.path.join(out, "summary.json"), log.summary())


_ABLATIONS = {
    "sb+fb": (True, True),
    "sb": (True, False),
    "fb": (False, True),
    "none": (False, False),
}


def cmd_nmpc_sim(args):
    scenario = _apply_overrides(_load_scenario_arg(args.scenario), args)
    if args.ablation is not None:
        sb, fb = _ABLATIONS[args.ablation]
        scenario = scenario.with_flags(feedback=fb, stochastic_bounds=sb)
    log = run_closed_loop(scenario, loops=args.loops,
                          mc_samples=args.mc_samples,
                          max_intervals=args.max_intervals)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_runlog(args.out, log, args.timing)
    summary = log.summary()
    print(f"scenario={scenario.name} intervals={summary['intervals']} "
          f"loops={summary['loops_completed']:.3f} "
          f"bounded_fraction={summary['bounded_fraction']:.4f} "
          f"collision_steps={summary['collision_steps']}")
    if log.aborted:
        print(f"aborted: {log.abort_reason}", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args):
    scenario = _apply_overrides(_load_scenario_arg(args.scenario), args)
    with open(args.hyperparams, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("schema_version") != HYPERPARAMS_SCHEMA_VERSION:
        raise ScenarioError("hyperparams: unsupported schema_version")
    hyper = PolicyHyperparams(
        mean=np.asarray(data["mean"], dtype=float),
        variance=np.asarray(data["variance"], dtype=float),
        n_controls=int(data["n_controls"]), n_timesteps=int(data["n_timesteps"]))
    if hyper.n_timesteps != scenario.planner.timesteps:
        raise ScenarioError("hyperparams: horizon does not match the scenario")
    mode = args.mode
    if mode is None:
        mode = "feedback" if data.get("feedback", scenario.feedback) else "open_loop"
    seed = scenario.seed if args.seed is None else args.seed
    mc_cost, mc_violation = monte_carlo_estimate(
        hyper, scenario.start, scenario, args.samples,
        seed=stream_key(seed, TAG_MC, 2_000_000), mode=mode)
    cost_bound = float(data["cost_bound"])
    constraint_bound = float(data["constraint_bound"])
    cost_ok = mc_cost <= cost_bound
    violation_ok = mc_violation <= constraint_bound
    print(f"cost: mc={mc_cost:.6g} bound={cost_bound:.6g} bounded={cost_ok}")
    print(f"violation: mc={mc_violation:.6g} bound={constraint_bound:.6g} "
          f"bounded={violation_ok}")
    return 0 if (cost_ok and violation_ok) else 1


def cmd_ablate(args):
    scenario = _apply_overrides(_load_scenario_arg(args.scenario), args)
    rows = []
    status = 0
    for label in ("sb+fb", "sb", "fb", "none"):
        sb, fb = _ABLATIONS[label]
        log = run_closed_loop(scenario, loops=args.loops, feedback=fb,
                              stochastic_bounds=sb, mc_samples=args.mc_samples,
                              max_intervals=args.max_intervals)
        if args.out:
            sub = os.path.join(args.out, label.replace("+", "_"))
            os.makedirs(sub, exist_ok=True)
            _write_runlog(sub, log, args.timing)
        s = log.summary()
        rows.append([label, sb, fb, s["intervals"], s["loops_completed"],
                     s["bounded_fraction"], s.get("cost_bounded_fraction"),
                     s.get("violation_bounded_fraction"), s["collision_steps"],
                     s["aborted"]])
        print(f"{label:6s} bounded_fraction={s['bounded_fraction']:.4f} "
              f"collisions={s['collision_steps']} loops={s['loops_completed']:.3f}")
        if log.aborted:
            status = 1
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "ablation.csv"),
                   ["label", "stochastic_bounds", "feedback", "intervals",
                    "loops_completed", "bounded_fraction",
                    "cost_bounded_fraction", "violation_bounded_fraction",
                    "collision_steps", "aborted"], rows)
    return status


def _add_common(p):
    p.add_argument("scenario",
                   help="scenario JSON path or packaged scenario name "
                        f"({', '.join(list_builtin_scenarios()) or 'none packaged'})")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None, help="directory for output files")
    timing = p.add_mutually_exclusive_group()
    timing.add_argument("--timing", dest="timing", action="store_true", default=True)
    timing.add_argument("--no-timing", dest="timing", action="store_false",
                        help="write timing columns as 0.0 for reproducible files")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pacmpc",
        description="Sampling-based stochastic NMPC with certified cost and "
                    "violation bounds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimize one trajectory distribution")
    _add_common(p)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--feedback", choices=("on", "off"), default=None)
    p.add_argument("--stochastic-bounds", dest="stochastic_bounds",
                   choices=("on", "off"), default=None)
    p.add_argument("--mc-samples", type=int, default=1024)
    p.add_argument("--mc-every", type=int, default=1,
                   help="Monte Carlo estimate cadence in the iteration log "
                        "(0 disables)")
    p.add_argument("--plot-samples", type=int, default=None,
                   help="rollouts stored in samples.json (default: scenario "
                        "sample count, 0 disables)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("nmpc-sim", help="run the receding-horizon loop")
    _add_common(p)
    p.add_argument("--loops", type=float, default=1.0)
    p.add_argument("--ablation", choices=sorted(_ABLATIONS), default=None)
    p.add_argument("--mc-samples", type=int, default=1024)
    p.add_argument("--max-intervals", type=int, default=None)
    p.set_defaults(func=cmd_nmpc_sim)

    p = sub.add_parser("validate", help="Monte Carlo check of stored bounds")
    _add_common(p)
    p.add_argument("hyperparams", help="hyperparams.json from `optimize`")
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--mode", choices=("open_loop", "feedback"), default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ablate", help="nmpc-sim over all four configurations")
    _add_common(p)
    p.add_argument("--loops", type=float, default=1.0)
    p.add_argument("--mc-samples", type=int, default=1024)
    p.add_argument("--max-intervals", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
