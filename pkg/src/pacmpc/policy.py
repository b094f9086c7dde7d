"""Gaussian distributions over control trajectories.

A policy is a diagonal multivariate Gaussian over flattened control
trajectories.  The flat layout is time-major: the first ``n_controls``
entries are the channels of timestep 0, the next ``n_controls`` entries
timestep 1, and so on.  Densities are evaluated in log space throughout;
only the importance ratio is ever exponentiated, under a clamp.
"""

from dataclasses import dataclass

import numpy as np

# exp() overflow guard when turning log density ratios into ratios
LOG_RATIO_LIMIT = 700.0

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PolicyHyperparams:
    """Mean and per-dimension variance of a control-trajectory Gaussian."""

    mean: np.ndarray
    variance: np.ndarray
    n_controls: int
    n_timesteps: int

    def __post_init__(self):
        if self.n_controls < 1 or self.n_timesteps < 1:
            raise ValueError("n_controls and n_timesteps must be positive")
        mean = np.ascontiguousarray(np.asarray(self.mean, dtype=float).ravel())
        var = np.ascontiguousarray(np.asarray(self.variance, dtype=float).ravel())
        dim = self.n_controls * self.n_timesteps
        if mean.shape != (dim,):
            raise ValueError(f"mean must have length {dim}, got {mean.shape[0]}")
        if var.shape != (dim,):
            raise ValueError(f"variance must have length {dim}, got {var.shape[0]}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite in every dimension")
        if not np.all(np.isfinite(var)) or np.any(var <= 0.0):
            raise ValueError("variance must be finite and strictly positive")
        mean.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self):
        return self.n_controls * self.n_timesteps

    def mean_steps(self):
        """Mean reshaped to (n_timesteps, n_controls)."""
        return self.mean.reshape(self.n_timesteps, self.n_controls)

    def variance_steps(self):
        """Variance reshaped to (n_timesteps, n_controls)."""
        return self.variance.reshape(self.n_timesteps, self.n_controls)


def sample_trajectory(hyper, rng):
    """Draw one flat control trajectory from the distribution."""
    z = rng.standard_normal(hyper.dim)
    return hyper.mean + np.sqrt(hyper.variance) * z


def log_density(hyper, xi):
    """Log density of a flat trajectory under the distribution."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (hyper.dim,):
        raise ValueError(f"trajectory must have length {hyper.dim}, got {xi.shape}")
    d = xi - hyper.mean
    return float(
        -0.5 * np.sum(np.log(hyper.variance) + d * d / hyper.variance)
        - 0.5 * hyper.dim * _LOG_2PI
    )


def log_density_batch(hyper, trajectories):
    """Log densities for a stack of flat trajectories, shape (m, dim)."""
    xi = np.asarray(trajectories, dtype=float)
    if xi.ndim != 2 or xi.shape[1] != hyper.dim:
        raise ValueError(f"trajectories must have shape (m, {hyper.dim})")
    d = xi - hyper.mean
    quad = np.sum(d * d / hyper.variance, axis=1)
    logdet = np.sum(np.log(hyper.variance))
    return -0.5 * (quad + logdet + hyper.dim * _LOG_2PI)


def log_importance_ratio(hyper_new, hyper_prior, xi):
    """log p(xi | new) - log p(xi | prior), without clamping."""
    if hyper_new.dim != hyper_prior.dim:
        raise ValueError("distributions must have matching dimension")
    return log_density(hyper_new, xi) - log_density(hyper_prior, xi)


def importance_ratio(hyper_new, hyper_prior, xi):
    """Density ratio p(xi | new) / p(xi | prior).

    The log ratio is clamped to +-LOG_RATIO_LIMIT before exponentiation
    so the result is always finite; bound evaluation reports how many
    samples hit the clamp.
    """
    log_r = log_importance_ratio(hyper_new, hyper_prior, xi)
    return float(np.exp(np.clip(log_r, -LOG_RATIO_LIMIT, LOG_RATIO_LIMIT)))


def renyi_divergence_2(hyper_new, hyper_prior):
    """Order-2 Renyi divergence D2(new || prior) for diagonal Gaussians.

    Finite only when 2 * var_prior - var_new > 0 in every dimension;
    otherwise the divergence is infinite and a ValueError is raised.
    """
    if hyper_new.dim != hyper_prior.dim:
        raise ValueError("distributions must have matching dimension")
    var_n = hyper_new.variance
    var_p = hyper_prior.variance
    v = 2.0 * var_p - var_n
    if np.any(v <= 0.0):
        bad = int(np.argmax(v <= 0.0))
        raise ValueError(
            "order-2 Renyi divergence is infinite: "
            f"2*prior_var - new_var <= 0 at dimension {bad}"
        )
    delta = hyper_new.mean - hyper_prior.mean
    quad = np.sum(delta * delta / v)
    logdet = 0.5 * np.sum(np.log(v * var_n / (var_p * var_p)))
    return float(quad - logdet)
