"""Receding-horizon control with certified bounds at every interval.

The loop plans in virtual time: while the plant executes the previously
issued feedback policy over one replanning interval, the next policy is
optimized from the state measured at the interval start.  Each new
distribution is seeded by trimming the executed prefix off the previous
optimum, re-meaning it along one stochastic feedback rollout, and padding
fresh zero-mean steps at the tail.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import step_stochastic_batch
from .feedback import apply_feedback, compute_feedback_params
from .policy import PolicyHyperparams
from .rng import TAG_INTERVAL, TAG_MC, TAG_PLANT, TAG_PRIOR, sample_stream, stream_key
from .rollout import _nominal_states_batch
from .scenario import ScenarioError
from .trajopt import monte_carlo_estimate, trajectory_distribution_opt


@dataclass(frozen=True)
class ExecutablePolicy:
    """A feedback policy scheduled to start executing at a known time."""

    policy: object
    interval: int
    created_at: float

    @property
    def horizon(self):
        return self.policy.horizon


@dataclass
class NmpcStepResult:
    executable: ExecutablePolicy
    hyperparams: PolicyHyperparams
    prior: PolicyHyperparams
    report: object
    warning: str
    iterations_run: int


def create_prior(hyper, x0, scenario, rng, hold_steps=None, stochastic_remean=True):
    """Warm-start distribution for the next interval.

    Drops the first ``hold_steps`` command blocks (they are executing
    now), re-means the remainder along one stochastic rollout of the
    trimmed policy's feedback law from ``x0``, pads zero-mean commands at
    the tail, and extends the variance by repeating its last block.
    """
    planner = scenario.planner
    h = planner.hold_steps if hold_steps is None else int(hold_steps)
    T, N = hyper.n_timesteps, hyper.n_controls
    if not 0 <= h < T:
        raise ValueError(f"hold_steps must lie in [0, {T}), got {h}")
    keep = T - h
    model = scenario.model
    dt = planner.dt

    mu = hyper.mean_steps()[h:]
    var = hyper.variance_steps()[h:]

    nominal = _nominal_states_batch(model, dt, x0, mu[None])[0]
    fb = compute_feedback_params(model, scenario.lqr, nominal, mu, dt)

    if stochastic_remean and not scenario.noise.is_zero:
        noise_rows = scenario.noise.sample_block(rng, keep)
    else:
        noise_rows = np.zeros((keep, model.state_dim))

    new_mu = np.empty((T, N))
    x = np.asarray(x0, dtype=float)
    for k in range(keep):
        u = apply_feedback(fb, k, x)
        new_mu[k] = u
        x = step_stochastic_batch(model, x[None], u[None], dt, noise_rows[k][None])[0]
    new_mu[keep:] = 0.0

    new_var = np.vstack([var, np.tile(var[-1], (h, 1))])
    return PolicyHyperparams(mean=new_mu.ravel(), variance=new_var.ravel(),
                             n_controls=N, n_timesteps=T)


def _freeze_prefix_mask(hyper, hold_steps):
    mask = np.zeros((hyper.n_timesteps, hyper.n_controls), dtype=bool)
    mask[:hold_steps] = True
    return mask.ravel()


def nmpc_step(hyper_prev, x0, scenario, seed, interval=0, iterations=None,
              wall_time_s=None, workers=None):
    """Plan the policy that starts executing one replanning period after
    ``x0`` was measured.

    The optimized distribution covers the full horizon from ``x0`` with
    its executing command prefix frozen; the returned executable policy
    is that optimum trimmed by the prefix, with LQR gains along the
    optimized mean's nominal trajectory.
    """
    planner = scenario.planner
    h = planner.hold_steps
    model = scenario.model
    dt = planner.dt

    prior_rng = sample_stream(stream_key(seed, TAG_PRIOR, interval), 0)
    prior = create_prior(hyper_prev, x0, scenario, prior_rng)

    if iterations is None and wall_time_s is None:
        iterations = planner.iterations_per_interval
    res = trajectory_distribution_opt(
        prior, x0, scenario, iterations=iterations, wall_time_s=wall_time_s,
        freeze_mask=_freeze_prefix_mask(prior, h),
        seed=stream_key(seed, TAG_INTERVAL, interval), workers=workers)

    best = res.hyperparams
    mu = best.mean_steps()
    nominal = _nominal_states_batch(model, dt, x0, mu[None])[0]
    fb = compute_feedback_params(model, scenario.lqr, nominal, mu, dt)
    trimmed = replace(fb, nominal_states=fb.nominal_states[h:],
                      nominal_controls=fb.nominal_controls[h:],
                      gains=fb.gains[h:])
    executable = ExecutablePolicy(policy=trimmed, interval=interval,
                                  created_at=interval * h * dt)
    return NmpcStepResult(executable=executable, hyperparams=best, prior=prior,
                          report=res.report, warning=res.warning,
                          iterations_run=len(res.history))


@dataclass
class IntervalRecord:
    """Bounds, estimates, and plant telemetry for one replanning interval."""

    interval: int
    time: float
    state: np.ndarray
    goal: np.ndarray
    alpha: float
    cost_bound: float
    constraint_bound: float
    mc_cost: float
    mc_violation: float
    cost_bounded: bool
    violation_bounded: bool
    active_interval: int
    collision: bool
    iterations_run: int
    wall_ms: float
    warning: str


@dataclass
class RunLog:
    """Complete record of one receding-horizon run."""

    scenario_name: str
    seed: int
    feedback: bool
    stochastic_bounds: bool
    dt: float
    hold_steps: int
    route_length: float
    intervals: list
    times: np.ndarray
    states: np.ndarray
    commands: np.ndarray
    collision_steps: int
    loops_completed: float
    aborted: bool
    abort_reason: str = None

    def bounded_fraction(self):
        """Fraction of intervals whose Monte Carlo estimates both lie at
        or below their certified bounds."""
        flags = [r.cost_bounded and r.violation_bounded for r in self.intervals
                 if r.mc_cost is not None]
        return float(np.mean(flags)) if flags else float("nan")

    def summary(self):
        scored = [r for r in self.intervals if r.mc_cost is not None]
        out = {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "feedback": self.feedback,
            "stochastic_bounds": self.stochastic_bounds,
            "intervals": len(self.intervals),
            "loops_completed": self.loops_completed,
            "collision_steps": self.collision_steps,
            "collision_intervals": int(sum(r.collision for r in self.intervals)),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "bounded_fraction": self.bounded_fraction(),
            "mean_constraint_bound": float(np.mean([r.constraint_bound
                                                    for r in self.intervals]))
            if self.intervals else float("nan"),
        }
        if scored:
            out["cost_bounded_fraction"] = float(
                np.mean([r.cost_bounded for r in scored]))
            out["violation_bounded_fraction"] = float(
                np.mean([r.violation_bounded for r in scored]))
            out["mean_mc_violation"] = float(
                np.mean([r.mc_violation for r in scored]))
        return out


def _bootstrap_policy(scenario, x0):
    """Executable policy for the very first interval: the scenario prior's
    mean with gains along its nominal rollout, untrimmed."""
    mu = scenario.prior.mean_steps()
    nominal = _nominal_states_batch(scenario.model, scenario.planner.dt,
                                    x0, mu[None])[0]
    fb = compute_feedback_params(scenario.model, scenario.lqr, nominal, mu,
                                 scenario.planner.dt)
    return ExecutablePolicy(policy=fb, interval=-1, created_at=0.0)


def _plant_substeps(planner):
    """(substeps per coarse step, substep duration)."""
    if planner.control_rate_hz is None:
        return 1, planner.dt
    n = max(1, int(round(planner.dt * planner.control_rate_hz)))
    return n, planner.dt / n


def run_closed_loop(scenario, loops=1.0, seed=None, feedback=None,
                    stochastic_bounds=None, mc_samples=1024, workers=None,
                    max_intervals=None):
    """Drive the plant around the scenario route for ``loops`` circuits.

    The plant always experiences the scenario's stochastic noise; the
    ``feedback`` and ``stochastic_bounds`` overrides only change how the
    per-interval distributions are optimized and certified (the ablation
    axes).  Returns a RunLog.
    """
    if scenario.route is None:
        raise ScenarioError("route: required for receding-horizon runs")
    scenario = scenario.with_flags(feedback=feedback,
                                   stochastic_bounds=stochastic_bounds)
    seed = scenario.seed if seed is None else int(seed)
    planner = scenario.planner
    model = scenario.model
    route = scenario.route
    h = planner.hold_steps
    dt = planner.dt
    S = model.state_dim
    substeps, dt_sub = _plant_substeps(planner)
    sub_noise = scenario.noise if substeps == 1 else scenario.noise.scaled(dt / dt_sub)

    if max_intervals is None:
        est = loops * route.length / (route.cruise_speed * h * dt)
        max_intervals = int(np.ceil(est)) * 3 + 20

    plant_rng = sample_stream(stream_key(seed, TAG_PLANT), 0)
    x = scenario.start.copy()
    active = _bootstrap_policy(scenario.with_goal(route.goal_state(x, S)), x)
    hyper_prev = scenario.prior

    intervals = []
    times = [0.0]
    states = [x.copy()]
    commands = []
    collision_steps = 0
    total_progress = 0.0
    s_prev = route.project(x)
    target = loops * route.length
    aborted = False
    abort_reason = None

    k = 0
    while total_progress < target and k < max_intervals:
        x0_interval = x.copy()
        goal = route.goal_state(x, S)
        scen_k = scenario.with_goal(goal)
        tick = time.perf_counter()
        step = nmpc_step(hyper_prev, x, scen_k, seed, interval=k, workers=workers)
        wall_ms = (time.perf_counter() - tick) * 1e3

        mc_cost = mc_violation = None
        if mc_samples:
            mc_cost, mc_violation = monte_carlo_estimate(
                step.hyperparams, x, scen_k, mc_samples,
                seed=stream_key(seed, TAG_MC, k), workers=workers)

        # The plant runs the previously issued policy while this interval's
        # optimization happens (virtual time).
        collided = False
        traveled = 0.0
        try:
            for s in range(h):
                u = apply_feedback(active.policy, s, x)
                commands.append(u)
                for _ in range(substeps):
                    prev = x
                    x = step_stochastic_batch(model, x[None], u[None], dt_sub,
                                              sub_noise.sample_block(plant_rng, 1))[0]
                    traveled += float(np.hypot(x[0] - prev[0], x[1] - prev[1]))
                times.append(times[-1] + dt)
                states.append(x.copy())
                if scenario.obstacles.violation_batch(x[None, None])[0]:
                    collision_steps += 1
                    collided = True
        except RuntimeError as exc:
            aborted = True
            abort_reason = f"plant diverged during interval {k}: {exc}"

        intervals.append(IntervalRecord(
            interval=k, time=k * h * dt, state=x0_interval, goal=goal,
            alpha=step.report.alpha if step.report else float("nan"),
            cost_bound=step.report.cost_bound if step.report else float("nan"),
            constraint_bound=step.report.constraint_bound if step.report else float("nan"),
            mc_cost=mc_cost, mc_violation=mc_violation,
            cost_bounded=(mc_cost is not None and step.report is not None
                          and mc_cost <= step.report.cost_bound),
            violation_bounded=(mc_violation is not None and step.report is not None
                               and mc_violation <= step.report.constraint_bound),
            active_interval=active.interval, collision=collided,
            iterations_run=step.iterations_run, wall_ms=wall_ms,
            warning=step.warning))
        if aborted:
            break

        s_new = route.project(x)
        ds = s_new - s_prev
        if route.closed:
            if ds < -0.5 * route.length:
                ds += route.length
            elif ds > 0.5 * route.length:
                ds -= route.length
        # Route progress cannot exceed the distance the plant physically
        # covered this interval; a projection jump across the track interior
        # would otherwise register as a huge (possibly negative) advance.
        ds = float(np.clip(ds, -traveled, traveled))
        total_progress += ds
        s_prev = s_new
        hyper_prev = step.hyperparams
        active = step.executable
        k += 1

    return RunLog(
        scenario_name=scenario.name, seed=seed, feedback=scenario.feedback,
        stochastic_bounds=scenario.stochastic_bounds, dt=dt, hold_steps=h,
        route_length=route.length, intervals=intervals,
        times=np.asarray(times), states=np.asarray(states),
        commands=np.asarray(commands) if commands else np.zeros((0, model.control_dim)),
        collision_steps=collision_steps,
        loops_completed=total_progress / route.length,
        aborted=aborted, abort_reason=abort_reason)
