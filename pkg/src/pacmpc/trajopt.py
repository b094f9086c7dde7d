"""Iterative improvement of a control-trajectory distribution.

Each iteration draws a fresh sample batch from the current distribution,
appends it to a sliding archive of recent batches, and minimizes the
combined certified objective (cost bound plus weighted violation bound)
over the distribution hyperparameters and the bound's free scale.
"""

import time
from dataclasses import dataclass

import numpy as np

from .pac_bound import BoundOptConfig, EvaluationBatch, optimize_bound
from .rng import TAG_MC, TAG_OPT, stream_key
from .rollout import evaluate_batch


@dataclass
class IterationRecord:
    """One optimization iteration's certified bounds and diagnostics."""

    iteration: int
    alpha: float
    cost_bound: float
    constraint_bound: float
    objective: float
    cost_empirical: float
    cost_divergence: float
    constraint_empirical: float
    constraint_divergence: float
    confidence: float
    extreme_ratio_count: int
    mc_cost: float = None
    mc_violation: float = None
    wall_ms: float = 0.0


@dataclass
class TrajOptResult:
    hyperparams: object
    report: object
    history: list
    batch: object
    warning: str = None


def _opt_config(planner, freeze_mask, alpha_init):
    return BoundOptConfig(
        delta=planner.delta, gamma=planner.gamma, freeze_mask=freeze_mask,
        max_iterations=planner.opt_max_iterations,
        step_tolerance=planner.opt_step_tolerance,
        alpha_min=planner.alpha_min, alpha_max=planner.alpha_max,
        alpha_init=alpha_init,
        variance_floor=planner.variance_floor,
        variance_margin=planner.variance_margin,
    )


def trajectory_distribution_opt(hyper0, x0, scenario, iterations=None,
                                wall_time_s=None, freeze_mask=None, seed=None,
                                mode=None, stochastic=None, mc_every=0,
                                mc_samples=1024, workers=None):
    """Run the sample/optimize loop from an initial distribution.

    The budget is either a fixed iteration count or a wall-clock limit
    (whichever is hit first when both are given).  If bound optimization
    becomes infeasible the best iterate so far is returned with a
    warning; otherwise the final iterate is returned.
    """
    planner = scenario.planner
    if iterations is None and wall_time_s is None:
        iterations = planner.iterations
    seed = scenario.seed if seed is None else int(seed)
    if mode is None:
        mode = "feedback" if scenario.feedback else "open_loop"
    if stochastic is None:
        stochastic = scenario.stochastic_bounds

    current = hyper0
    batch = None
    history = []
    report = None
    warning = None
    warm_alpha = None
    best_obj = np.inf
    best = (hyper0, None)
    started = time.perf_counter()
    i = 0
    while True:
        if iterations is not None and i >= iterations:
            break
        if wall_time_s is not None and time.perf_counter() - started >= wall_time_s:
            break
        tick = time.perf_counter()
        key = stream_key(seed, TAG_OPT, i)
        XI, J, I = evaluate_batch(current, x0, scenario, planner.samples, key,
                                  mode=mode, stochastic=stochastic, workers=workers)
        if batch is None:
            batch = EvaluationBatch.single(current, XI, J, I)
        else:
            batch = batch.appended(current, XI, J, I, window=planner.priors)
        try:
            current, report = optimize_bound(
                batch, current, _opt_config(planner, freeze_mask, warm_alpha))
        except ValueError as exc:
            warning = f"bound optimization failed at iteration {i}: {exc}"
            current, report = best
            break
        warm_alpha = report.alpha

        mc_cost = mc_violation = None
        if mc_every and (i + 1) % mc_every == 0:
            mc_cost, mc_violation = monte_carlo_estimate(
                current, x0, scenario, mc_samples, seed=stream_key(seed, TAG_MC, i),
                mode=mode, workers=workers)
        history.append(IterationRecord(
            iteration=i, alpha=report.alpha, cost_bound=report.cost_bound,
            constraint_bound=report.constraint_bound, objective=report.objective,
            cost_empirical=report.cost_empirical,
            cost_divergence=report.cost_divergence,
            constraint_empirical=report.constraint_empirical,
            constraint_divergence=report.constraint_divergence,
            confidence=report.confidence,
            extreme_ratio_count=report.extreme_ratio_count,
            mc_cost=mc_cost, mc_violation=mc_violation,
            wall_ms=(time.perf_counter() - tick) * 1e3))
        if report.objective < best_obj:
            best_obj = report.objective
            best = (current, report)
        i += 1

    return TrajOptResult(hyperparams=current, report=report, history=history,
                         batch=batch, warning=warning)


def evaluate_distribution(hyper, x0, scenario, seed=None, mode=None,
                          stochastic=None, workers=None):
    """Certified bounds for a fixed distribution: draw one batch from it
    and pick the best bound scale, without moving the distribution."""
    planner = scenario.planner
    seed = scenario.seed if seed is None else int(seed)
    if mode is None:
        mode = "feedback" if scenario.feedback else "open_loop"
    if stochastic is None:
        stochastic = scenario.stochastic_bounds
    key = stream_key(seed, TAG_OPT, 0)
    XI, J, I = evaluate_batch(hyper, x0, scenario, planner.samples, key,
                              mode=mode, stochastic=stochastic, workers=workers)
    batch = EvaluationBatch.single(hyper, XI, J, I)
    frozen = np.ones(hyper.dim, dtype=bool)
    _, report = optimize_bound(batch, hyper, _opt_config(planner, frozen, None))
    return report, batch


def monte_carlo_estimate(hyper, x0, scenario, n_samples, seed, mode=None,
                         stochastic=True, workers=None):
    """Plain Monte Carlo estimates (mean cost, violation rate) from fresh
    stochastic rollouts of the distribution."""
    key = stream_key(seed, TAG_MC)
    _, J, I = evaluate_batch(hyper, x0, scenario, n_samples, key, mode=mode,
                             stochastic=stochastic, workers=workers)
    return float(np.mean(J)), float(np.mean(I))
