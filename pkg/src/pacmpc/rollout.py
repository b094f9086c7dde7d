"""Monte Carlo rollout evaluation of control-trajectory distributions.

Each sample draws a flat control trajectory from the distribution, rolls
it through the stochastic dynamics (open loop, or tracking its own
nominal with LQR feedback), and scores terminal-quadratic cost plus a
binary obstacle-collision indicator.  Batches are evaluated sample by
sample from keyed substreams, so results do not depend on how work is
split across threads.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import step_nominal_batch, step_stochastic_batch, linearize_batch
from .feedback import riccati_gains_batch
from .policy import sample_trajectory
from .rng import sample_stream

WORKERS_ENV = "PACMPC_WORKERS"


@dataclass(frozen=True)
class CostModel:
    """Quadratic cost around a goal state: terminal weight plus an
    optional running weight summed over interior timesteps."""

    Qf: np.ndarray
    goal: np.ndarray
    Q: np.ndarray = None

    def __post_init__(self):
        Qf = np.ascontiguousarray(np.asarray(self.Qf, dtype=float))
        goal = np.ascontiguousarray(np.asarray(self.goal, dtype=float).ravel())
        S = goal.size
        if Qf.shape != (S, S):
            raise ValueError(f"Qf must have shape ({S}, {S})")
        if not np.allclose(Qf, Qf.T, atol=1e-10):
            raise ValueError("Qf must be symmetric")
        if np.min(np.linalg.eigvalsh(Qf)) < -1e-9:
            raise ValueError("Qf must be positive semidefinite")
        Q = self.Q
        if Q is not None:
            Q = np.ascontiguousarray(np.asarray(Q, dtype=float))
            if Q.shape != (S, S):
                raise ValueError(f"Q must have shape ({S}, {S})")
            if not np.any(Q):
                Q = None
            elif not np.allclose(Q, Q.T, atol=1e-10) or np.min(np.linalg.eigvalsh(Q)) < -1e-9:
                raise ValueError("Q must be symmetric positive semidefinite")
        for arr in (Qf, goal) + ((Q,) if Q is not None else ()):
            arr.flags.writeable = False
        object.__setattr__(self, "Qf", Qf)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "Q", Q)

    def cost_batch(self, model, states):
        """Costs for a stack of state trajectories, shape (m, T+1, S)."""
        d = model.state_difference(states[:, -1], self.goal)
        cost = np.einsum("ms,st,mt->m", d, self.Qf, d)
        if self.Q is not None and states.shape[1] > 2:
            dk = model.state_difference(states[:, 1:-1], self.goal)
            cost = cost + np.einsum("mks,st,mkt->m", dk, self.Q, dk)
        return cost


@dataclass(frozen=True)
class ObstacleSet:
    """Circular obstacles in the plane of the first two state entries."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        centers = np.ascontiguousarray(np.asarray(self.centers, dtype=float).reshape(-1, 2))
        radii = np.ascontiguousarray(np.asarray(self.radii, dtype=float).ravel())
        if radii.shape[0] != centers.shape[0]:
            raise ValueError("need one radius per center")
        if np.any(radii <= 0.0):
            raise ValueError("obstacle radii must be positive")
        for arr in (centers, radii):
            arr.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def empty(cls):
        return cls(centers=np.zeros((0, 2)), radii=np.zeros(0))

    @property
    def n_obstacles(self):
        return int(self.radii.size)

    def violation_batch(self, states):
        """1 where any state along a trajectory is strictly inside an
        obstacle, else 0; shape (m,)."""
        m = states.shape[0]
        if self.n_obstacles == 0:
            return np.zeros(m, dtype=np.uint8)
        pos = states[:, :, None, :2]
        d2 = np.sum((pos - self.centers[None, None]) ** 2, axis=3)
        hit = np.any(d2 < self.radii ** 2, axis=(1, 2))
        return hit.astype(np.uint8)


@dataclass(frozen=True)
class RolloutResult:
    """One scored rollout."""

    cost: float
    violation: int
    executed_controls: np.ndarray
    states: np.ndarray


def cost_constr(controls, states, cost_model, obstacles, model):
    """Score a single trajectory: (quadratic cost, collision indicator)."""
    states = np.asarray(states, dtype=float)
    cost = float(cost_model.cost_batch(model, states[None])[0])
    violation = int(obstacles.violation_batch(states[None])[0])
    return cost, violation


def resolve_workers(workers=None):
    """Worker count: explicit argument, else the PACMPC_WORKERS
    environment variable, else 1."""
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, "1")
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return workers


def _rollout_open_loop_batch(model, dt, x0, XI, W):
    """Open-loop stochastic rollouts; XI is (m, T, N) raw draws and W is
    (m, T, S) noise rows or None for deterministic dynamics."""
    m, T, _ = XI.shape
    S = model.state_dim
    X = np.empty((m, T + 1, S))
    X[:, 0] = x0
    executed = np.empty_like(XI)
    for k in range(T):
        u = model.clamp_controls(XI[:, k])
        executed[:, k] = u
        if W is None:
            X[:, k + 1] = step_nominal_batch(model, X[:, k], u, dt)
        else:
            X[:, k + 1] = step_stochastic_batch(model, X[:, k], u, dt, W[:, k])
    return X, executed


def _nominal_states_batch(model, dt, x0, XI):
    """Deterministic rollouts of raw control draws, shape (m, T+1, S)."""
    m, T, _ = XI.shape
    X = np.empty((m, T + 1, model.state_dim))
    X[:, 0] = x0
    for k in range(T):
        X[:, k + 1] = step_nominal_batch(model, X[:, k], XI[:, k], dt)
    return X


def _gains_batch(model, weights, dt, nominal_states, XI):
    """Per-sample LQR gains along each sample's nominal trajectory."""
    m, T, N = XI.shape
    S = model.state_dim
    A, B = linearize_batch(model, nominal_states[:, :-1].reshape(m * T, S),
                           XI.reshape(m * T, N), dt)
    return riccati_gains_batch(A.reshape(m, T, S, S), B.reshape(m, T, S, N), weights)


def _rollout_feedback_batch(model, weights, dt, x0, XI, W, shared_gains=None):
    """Two-stage feedback rollouts: each sample's raw draw defines a
    nominal trajectory and gains, then the stochastic rollout tracks it."""
    m, T, _ = XI.shape
    nominal = _nominal_states_batch(model, dt, x0, XI)
    if shared_gains is None:
        K = _gains_batch(model, weights, dt, nominal, XI)
    else:
        K = np.broadcast_to(shared_gains, (m,) + shared_gains.shape)
    X = np.empty_like(nominal)
    X[:, 0] = x0
    executed = np.empty_like(XI)
    for k in range(T):
        dx = model.state_difference(X[:, k], nominal[:, k])
        u = XI[:, k] + np.matmul(K[:, k], dx[:, :, None])[:, :, 0]
        u = model.clamp_controls(u)
        executed[:, k] = u
        if W is None:
            X[:, k + 1] = step_nominal_batch(model, X[:, k], u, dt)
        else:
            X[:, k + 1] = step_stochastic_batch(model, X[:, k], u, dt, W[:, k])
    return X, executed


def _shared_gains(scenario, hyper, x0):
    """Gains linearized once about the distribution mean's nominal."""
    model = scenario.model
    T, N = hyper.n_timesteps, hyper.n_controls
    XI = hyper.mean.reshape(1, T, N)
    nominal = _nominal_states_batch(model, scenario.planner.dt, x0, XI)
    return _gains_batch(model, scenario.lqr, scenario.planner.dt, nominal, XI)[0]


def sample_cost_constraint(x0, xi, scenario, rng):
    """Score one open-loop stochastic rollout of the flat draw ``xi``.

    Noise for all timesteps is drawn from ``rng`` in one canonical block;
    a zero noise model draws nothing and gives a deterministic rollout.
    """
    return _single_sample(x0, xi, scenario, rng, feedback=False)


def sample_cost_constraint_feedback(x0, xi, scenario, rng):
    """Score one stochastic rollout of ``xi`` under per-sample feedback."""
    return _single_sample(x0, xi, scenario, rng, feedback=True)


def _single_sample(x0, xi, scenario, rng, feedback):
    model = scenario.model
    T = scenario.planner.timesteps
    N = model.control_dim
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.shape != (N * T,):
        raise ValueError(f"xi must have length {N * T}, got {xi.shape[0]}")
    XI = xi.reshape(1, T, N)
    W = None if scenario.noise.is_zero else scenario.noise.sample_block(rng, T)[None]
    if feedback:
        X, executed = _rollout_feedback_batch(model, scenario.lqr,
                                              scenario.planner.dt, x0, XI, W)
    else:
        X, executed = _rollout_open_loop_batch(model, scenario.planner.dt, x0, XI, W)
    cost, violation = cost_constr(executed[0], X[0], scenario.cost,
                                  scenario.obstacles, model)
    return RolloutResult(cost=cost, violation=violation,
                         executed_controls=executed[0], states=X[0])


def mean_rollout_states(hyper, x0, scenario, n_samples, stream_key,
                        mode=None, workers=None):
    """State trajectories of ``n_samples`` stochastic rollouts that all
    execute the distribution mean (only the dynamics noise varies)."""
    if mode is None:
        mode = "feedback" if scenario.feedback else "open_loop"
    model = scenario.model
    T, N = hyper.n_timesteps, hyper.n_controls
    dt = scenario.planner.dt
    x0 = np.asarray(x0, dtype=float).ravel()
    if scenario.noise.is_zero:
        XI = hyper.mean.reshape(1, T, N)
        W = None
    else:
        XI = np.broadcast_to(hyper.mean.reshape(1, T, N), (n_samples, T, N))
        W = np.empty((n_samples, T, model.state_dim))
        for j in range(n_samples):
            W[j] = scenario.noise.sample_block(sample_stream(stream_key, j), T)
    if mode == "feedback":
        X, _ = _rollout_feedback_batch(model, scenario.lqr, dt, x0, XI, W)
    else:
        X, _ = _rollout_open_loop_batch(model, dt, x0, XI, W)
    return X


def evaluate_batch(hyper, x0, scenario, n_samples, stream_key,
                   mode=None, stochastic=True, workers=None,
                   return_states=False):
    """Draw and score ``n_samples`` rollouts of a distribution.

    Sample ``j`` always reads keyed substream ``j``: first the flat
    control draw, then (if the dynamics are stochastic) the process-noise
    block.  Returns (trajectories (M, dim), costs (M,), violations (M,))
    plus the state trajectories when ``return_states`` is set.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    model = scenario.model
    if mode is None:
        mode = "feedback" if scenario.feedback else "open_loop"
    if mode not in ("open_loop", "feedback"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    dt = scenario.planner.dt
    T = hyper.n_timesteps
    N = hyper.n_controls
    if N != model.control_dim:
        raise ValueError("distribution controls do not match the model")
    noise = None if (not stochastic or scenario.noise.is_zero) else scenario.noise
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (model.state_dim,):
        raise ValueError(f"x0 must have length {model.state_dim}")

    shared = None
    if mode == "feedback" and scenario.planner.linearize_on_prior_mean:
        shared = _shared_gains(scenario, hyper, x0)

    def run_chunk(bounds):
        start, stop = bounds
        m = stop - start
        XI = np.empty((m, hyper.dim))
        W = np.empty((m, T, model.state_dim)) if noise is not None else None
        for r in range(m):
            g = sample_stream(stream_key, start + r)
            XI[r] = sample_trajectory(hyper, g)
            if noise is not None:
                W[r] = noise.sample_block(g, T)
        XIr = XI.reshape(m, T, N)
        try:
            if mode == "feedback":
                X, executed = _rollout_feedback_batch(model, scenario.lqr, dt,
                                                      x0, XIr, W, shared)
            else:
                X, executed = _rollout_open_loop_batch(model, dt, x0, XIr, W)
        except RuntimeError as exc:
            raise RuntimeError(f"rollout failed in samples [{start}, {stop}): {exc}") from exc
        costs = scenario.cost.cost_batch(model, X)
        violations = scenario.obstacles.violation_batch(X)
        return XI, costs, violations, X

    n_workers = min(resolve_workers(workers), n_samples)
    edges = np.linspace(0, n_samples, n_workers + 1).astype(int)
    ranges = [(int(edges[i]), int(edges[i + 1])) for i in range(n_workers)
              if edges[i] < edges[i + 1]]
    if len(ranges) == 1:
        parts = [run_chunk(ranges[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
            parts = list(pool.map(run_chunk, ranges))

    XI = np.concatenate([p[0] for p in parts], axis=0)
    costs = np.concatenate([p[1] for p in parts], axis=0)
    violations = np.concatenate([p[2] for p in parts], axis=0)
    if return_states:
        states = np.concatenate([p[3] for p in parts], axis=0)
        return XI, costs, violations, states
    return XI, costs, violations
