"""Stochastic discrete-time dynamics: model interface, bicycle realization,
process-noise models, Euler stepping, and finite-difference linearization.

Models expose a continuous-time drift f(x, u); discrete stepping is
explicit Euler, x' = saturate(x + dt * (f(x, clamp(u)) + w)), where w is
additive process noise on the state derivative and saturate() applies
hard per-state limits after integration.
"""

from dataclasses import dataclass, field

import numpy as np

_FD_EPS = 1e-6


class DynamicsModel:
    """Base class for control-affine-in-noise stochastic models.

    Subclasses set ``state_dim``, ``control_dim``, ``control_lower``,
    ``control_upper``, optionally ``state_limits`` (list of
    ``(state_index, lower, upper)`` saturation triples) and
    ``angle_indices`` (state entries that live on the circle), and
    implement ``drift``.
    """

    state_dim = 0
    control_dim = 0
    control_lower = None
    control_upper = None
    state_limits = ()
    angle_indices = ()

    def drift(self, states, controls):
        """Continuous-time state derivative, batched over leading axes."""
        raise NotImplementedError

    def clamp_controls(self, controls):
        """Project controls onto the admissible box."""
        return np.clip(controls, self.control_lower, self.control_upper)

    def saturate(self, states):
        """Apply hard per-state limits after an integration step."""
        if not self.state_limits:
            return states
        out = np.array(states, dtype=float, copy=True)
        for idx, lo, hi in self.state_limits:
            out[..., idx] = np.clip(out[..., idx], lo, hi)
        return out

    def state_difference(self, x, x_ref):
        """x - x_ref with angle entries wrapped into (-pi, pi]."""
        d = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
        if self.angle_indices:
            d = np.array(d, copy=True)
            for idx in self.angle_indices:
                d[..., idx] = wrap_angle(d[..., idx])
        return d


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


class BicycleModel(DynamicsModel):
    """Kinematic bicycle with states [x, y, heading, speed, steering angle]
    and controls [acceleration, steering rate].

    The steering angle saturates hard at +-steering_limit after each
    integration step; both controls are box constrained.
    """

    state_dim = 5
    control_dim = 2

    def __init__(self, wheel_base=0.33, steering_limit=0.4,
                 accel_limit=1.0, steering_rate_limit=1.0):
        if wheel_base <= 0.0:
            raise ValueError("wheel_base must be positive")
        if steering_limit <= 0.0 or steering_limit >= np.pi / 2:
            raise ValueError("steering_limit must lie in (0, pi/2)")
        self.wheel_base = float(wheel_base)
        self.steering_limit = float(steering_limit)
        self.control_lower = np.array([-accel_limit, -steering_rate_limit])
        self.control_upper = np.array([accel_limit, steering_rate_limit])
        self.state_limits = ((4, -self.steering_limit, self.steering_limit),)
        self.angle_indices = (2,)

    def drift(self, states, controls):
        x = np.asarray(states, dtype=float)
        u = np.asarray(controls, dtype=float)
        out = np.empty_like(x)
        heading = x[..., 2]
        speed = x[..., 3]
        steer = x[..., 4]
        out[..., 0] = speed * np.cos(heading)
        out[..., 1] = speed * np.sin(heading)
        out[..., 2] = speed * np.tan(steer) / self.wheel_base
        out[..., 3] = u[..., 0]
        out[..., 4] = u[..., 1]
        return out


class LinearModel(DynamicsModel):
    """Linear drift f(x, u) = F x + G u, mainly for oracle tests."""

    def __init__(self, F, G, control_lower=None, control_upper=None):
        F = np.asarray(F, dtype=float)
        G = np.asarray(G, dtype=float)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ValueError("F must be square")
        if G.ndim != 2 or G.shape[0] != F.shape[0]:
            raise ValueError("G must have one row per state")
        self.F = F
        self.G = G
        self.state_dim = F.shape[0]
        self.control_dim = G.shape[1]
        big = np.full(self.control_dim, np.inf)
        self.control_lower = -big if control_lower is None else np.asarray(control_lower, dtype=float)
        self.control_upper = big if control_upper is None else np.asarray(control_upper, dtype=float)

    def drift(self, states, controls):
        x = np.asarray(states, dtype=float)
        u = np.asarray(controls, dtype=float)
        return x @ self.F.T + u @ self.G.T


@dataclass(frozen=True)
class NoiseModel:
    """Additive process noise on the state derivative.

    A single Gaussian (``n_components == 1``) or a Gaussian mixture.
    Component covariances are diagonal; zero diagonals are allowed and
    give deterministic dynamics in those dimensions.
    """

    weights: np.ndarray
    means: np.ndarray
    cov_diags: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float).ravel())
        mu = np.ascontiguousarray(np.atleast_2d(np.asarray(self.means, dtype=float)))
        cov = np.ascontiguousarray(np.atleast_2d(np.asarray(self.cov_diags, dtype=float)))
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w <= 0.0) or abs(float(np.sum(w)) - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if mu.shape[0] != w.size or cov.shape != mu.shape:
            raise ValueError("means and cov_diags must be (n_components, state_dim)")
        if np.any(cov < 0.0) or not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mu)):
            raise ValueError("component means must be finite and cov_diags non-negative")
        for arr in (w, mu, cov):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "cov_diags", cov)

    @classmethod
    def gaussian(cls, cov_diag, mean=None):
        cov = np.asarray(cov_diag, dtype=float).ravel()
        mu = np.zeros_like(cov) if mean is None else np.asarray(mean, dtype=float).ravel()
        return cls(weights=np.ones(1), means=mu[None, :], cov_diags=cov[None, :])

    @classmethod
    def zero(cls, state_dim):
        return cls.gaussian(np.zeros(state_dim))

    @property
    def n_components(self):
        return int(self.weights.size)

    @property
    def state_dim(self):
        return int(self.means.shape[1])

    @property
    def is_zero(self):
        return (self.n_components == 1
                and not np.any(self.cov_diags)
                and not np.any(self.means))

    def moments(self):
        """Overall (mean, covariance diagonal) of the mixture."""
        mean = self.weights @ self.means
        second = self.weights @ (self.cov_diags + self.means ** 2)
        return mean, second - mean ** 2

    def scaled(self, factor):
        """Same mixture with component covariances scaled by ``factor``;
        used to keep diffusion strength consistent across substep sizes."""
        if factor <= 0.0:
            raise ValueError("scale factor must be positive")
        return NoiseModel(weights=self.weights, means=self.means,
                          cov_diags=self.cov_diags * float(factor))

    def sample_block(self, rng, n_steps):
        """Draw noise for ``n_steps`` steps, shape (n_steps, state_dim).

        Canonical draw order: for mixtures, one block of uniforms for the
        component labels, then one block of standard normals; plain
        Gaussians draw only the normal block.  Keeping this order fixed
        makes batched evaluation reproducible sample by sample.
        """
        if self.n_components == 1:
            z = rng.standard_normal((n_steps, self.state_dim))
            return self.means[0] + np.sqrt(self.cov_diags[0]) * z
        edges = np.cumsum(self.weights)
        labels = np.searchsorted(edges, rng.random(n_steps))
        labels = np.minimum(labels, self.n_components - 1)
        z = rng.standard_normal((n_steps, self.state_dim))
        return self.means[labels] + np.sqrt(self.cov_diags[labels]) * z


def step_nominal(model, x, u, dt):
    """One deterministic Euler step with control clamping and saturation."""
    return step_nominal_batch(model, np.asarray(x, dtype=float)[None, :],
                              np.asarray(u, dtype=float)[None, :], dt)[0]


def step_nominal_batch(model, states, controls, dt):
    """Deterministic Euler step for a batch of states, shape (m, S)."""
    u = model.clamp_controls(np.asarray(controls, dtype=float))
    x = np.asarray(states, dtype=float)
    nxt = model.saturate(x + dt * model.drift(x, u))
    _check_finite_states(nxt)
    return nxt


def step_stochastic(model, noise, x, u, dt, rng):
    """One stochastic Euler step; noise adds to the state derivative."""
    w = noise.sample_block(rng, 1)[0]
    return step_stochastic_batch(model, np.asarray(x, dtype=float)[None, :],
                                 np.asarray(u, dtype=float)[None, :], dt, w[None, :])[0]


def step_stochastic_batch(model, states, controls, dt, noise_rows):
    """Stochastic Euler step for a batch, with pre-drawn noise rows (m, S)."""
    u = model.clamp_controls(np.asarray(controls, dtype=float))
    x = np.asarray(states, dtype=float)
    nxt = model.saturate(x + dt * (model.drift(x, u) + noise_rows))
    _check_finite_states(nxt)
    return nxt


def _check_finite_states(states):
    if not np.all(np.isfinite(states)):
        bad = np.argwhere(~np.isfinite(states))[0]
        raise RuntimeError(
            f"non-finite state after integration step at index {tuple(int(b) for b in bad)}"
        )


def linearize(model, x, u, dt, return_masks=False):
    """Discrete-time Jacobians (A, B) of one Euler step at (x, u).

    Uses central finite differences on the smooth drift, then accounts for
    control clamping and post-step state saturation with one-sided
    indicator diagonals: a control pinned at its bound contributes a zero
    column to B, and a saturated state zeroes its row in both A and B.
    """
    out = linearize_batch(model, np.asarray(x, dtype=float)[None, :],
                          np.asarray(u, dtype=float)[None, :], dt,
                          return_masks=return_masks)
    if return_masks:
        A, B, masks = out
        return A[0], B[0], {k: v[0] for k, v in masks.items()}
    A, B = out
    return A[0], B[0]


def linearize_batch(model, states, controls, dt, return_masks=False):
    """Finite-difference Jacobians for a batch: A (m, S, S), B (m, S, N)."""
    x = np.asarray(states, dtype=float)
    u_raw = np.asarray(controls, dtype=float)
    m, S = x.shape
    N = u_raw.shape[1]
    u = model.clamp_controls(u_raw)

    hx = _FD_EPS * (1.0 + np.abs(x))
    hu = _FD_EPS * (1.0 + np.abs(u))

    # Stack +/- perturbations of every state and control coordinate and
    # evaluate the drift once on the whole block.
    reps = 2 * (S + N)
    Xs = np.broadcast_to(x, (reps, m, S)).copy()
    Us = np.broadcast_to(u, (reps, m, N)).copy()
    for i in range(S):
        Xs[2 * i, :, i] += hx[:, i]
        Xs[2 * i + 1, :, i] -= hx[:, i]
    for j in range(N):
        r = 2 * S + 2 * j
        Us[r, :, j] += hu[:, j]
        Us[r + 1, :, j] -= hu[:, j]
    F = model.drift(Xs.reshape(reps * m, S), Us.reshape(reps * m, N))
    F = F.reshape(reps, m, S)

    Jx = np.empty((m, S, S))
    Ju = np.empty((m, S, N))
    for i in range(S):
        Jx[:, :, i] = (F[2 * i] - F[2 * i + 1]) / (2.0 * hx[:, i])[:, None]
    for j in range(N):
        r = 2 * S + 2 * j
        Ju[:, :, j] = (F[r] - F[r + 1]) / (2.0 * hu[:, j])[:, None]

    A = dt * Jx
    A[:, np.arange(S), np.arange(S)] += 1.0

    # Controls strictly inside the box pass through; at or beyond a bound
    # the one-sided derivative of the clamp is taken as zero.
    active_u = (u_raw > model.control_lower) & (u_raw < model.control_upper)
    B = dt * Ju * active_u[:, None, :]

    # Saturated states stay pinned: zero out their rows.
    active_x = np.ones((m, S), dtype=bool)
    if model.state_limits:
        pre = x + dt * model.drift(x, u)
        for idx, lo, hi in model.state_limits:
            active_x[:, idx] = (pre[:, idx] > lo) & (pre[:, idx] < hi)
        A *= active_x[:, :, None]
        B *= active_x[:, :, None]

    if return_masks:
        return A, B, {"controls_active": active_u, "states_active": active_x}
    return A, B
