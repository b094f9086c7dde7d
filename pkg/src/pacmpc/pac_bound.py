"""High-confidence upper bounds on expected cost and violation probability.

Given an archive of sample batches drawn from earlier distributions, this
module evaluates and optimizes a PAC-style certificate for a candidate
distribution: a robustified importance-weighted empirical mean, plus a
variance penalty that scales with the order-2 Renyi divergence between
the candidate and each sampling distribution, plus a confidence margin.
Both the certified cost and the certified violation probability hold
with probability at least 1 - delta each.

Everything is evaluated in log space; ratios and exponentials are capped
so the objective and its analytic gradients stay finite.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .policy import LOG_RATIO_LIMIT, PolicyHyperparams, log_density_batch

# Above this log argument the softened log switches to its asymptotic
# expansion; below it the direct form is exact and overflow-free.
_PSI_LOG_SWITCH = 30.0
# Divergence exponentials are capped here so that the objective and its
# gradients stay finite even when a line search probes distributions far
# from every sampling prior; the capped penalty (~1e130) still dominates
# any realistic empirical term, so the optimizer retreats as intended.
_EXP_CAP = 300.0
_LOG_2PI = float(np.log(2.0 * np.pi))


def robust_log(x):
    """Softened log transform log(1 + x + x^2 / 2), elementwise.

    Defined for every real x (the argument of the log is at least 1/2);
    for large positive x it grows like 2*log(x) instead of linearly,
    which caps the influence of any single importance-weighted sample on
    the empirical mean.
    """
    x = np.asarray(x, dtype=float)
    return np.log1p(x * (1.0 + 0.5 * x))


def robust_log_from_log(log_x):
    """robust_log(exp(log_x)) computed without overflow."""
    t = np.asarray(log_x, dtype=float)
    out = np.empty_like(t)
    small = t <= _PSI_LOG_SWITCH
    z = np.exp(t[small])
    out[small] = np.log1p(z * (1.0 + 0.5 * z))
    tb = t[~small]
    e1 = np.exp(-tb)
    out[~small] = 2.0 * tb - np.log(2.0) + np.log1p(2.0 * e1 + 2.0 * e1 * e1)
    return out


def _weight_from_log(log_x):
    """d/d(log x) of robust_log(exp(log_x)): the per-sample gradient
    weight (x + x^2) / (1 + x + x^2/2), in [0, 2)."""
    t = np.asarray(log_x, dtype=float)
    out = np.empty_like(t)
    small = t <= _PSI_LOG_SWITCH
    z = np.exp(t[small])
    out[small] = (z + z * z) / (1.0 + z + 0.5 * z * z)
    e1 = np.exp(-t[~small])
    out[~small] = (1.0 + e1) / (0.5 + e1 + e1 * e1)
    return out


@dataclass(frozen=True)
class EvaluationBatch:
    """Archive of scored samples from one or more sampling distributions.

    Row i holds M flat control draws from prior i with their costs and
    binary constraint indicators.
    """

    priors: tuple
    trajectories: np.ndarray
    costs: np.ndarray
    constraints: np.ndarray
    max_cost_per_prior: np.ndarray = field(init=False)
    max_constraint_per_prior: np.ndarray = field(init=False)

    def __post_init__(self):
        priors = tuple(self.priors)
        if not priors:
            raise ValueError("need at least one sampling distribution")
        dim = priors[0].dim
        for p in priors:
            if p.dim != dim:
                raise ValueError("all sampling distributions must share one dimension")
        xi = np.ascontiguousarray(np.asarray(self.trajectories, dtype=float))
        J = np.ascontiguousarray(np.asarray(self.costs, dtype=float))
        I = np.ascontiguousarray(np.asarray(self.constraints, dtype=np.uint8))
        L = len(priors)
        if xi.ndim != 3 or xi.shape[0] != L or xi.shape[2] != dim:
            raise ValueError(f"trajectories must have shape ({L}, M, {dim})")
        M = xi.shape[1]
        if M < 1 or J.shape != (L, M) or I.shape != (L, M):
            raise ValueError("costs and constraints must have shape (n_priors, M)")
        if not np.all(np.isfinite(xi)):
            raise ValueError("trajectories must be finite")
        if not np.all(np.isfinite(J)) or np.any(J < 0.0):
            raise ValueError("costs must be finite and non-negative")
        if np.any(np.asarray(self.constraints) > 1):
            raise ValueError("constraints must be 0/1 indicators")
        for arr in (xi, J, I):
            arr.flags.writeable = False
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "trajectories", xi)
        object.__setattr__(self, "costs", J)
        object.__setattr__(self, "constraints", I)
        object.__setattr__(self, "max_cost_per_prior", J.max(axis=1))
        object.__setattr__(self, "max_constraint_per_prior",
                           I.max(axis=1).astype(float))

    @property
    def n_priors(self):
        return len(self.priors)

    @property
    def n_samples(self):
        return int(self.costs.shape[1])

    @property
    def dim(self):
        return self.priors[0].dim

    @classmethod
    def single(cls, prior, trajectories, costs, constraints):
        return cls(priors=(prior,), trajectories=np.asarray(trajectories)[None],
                   costs=np.asarray(costs)[None],
                   constraints=np.asarray(constraints)[None])

    def appended(self, prior, trajectories, costs, constraints, window=None):
        """New archive with one more row, keeping at most ``window`` of the
        most recent rows."""
        priors = self.priors + (prior,)
        xi = np.concatenate([self.trajectories, np.asarray(trajectories)[None]], axis=0)
        J = np.concatenate([self.costs, np.asarray(costs)[None]], axis=0)
        I = np.concatenate([self.constraints,
                            np.asarray(constraints, dtype=np.uint8)[None]], axis=0)
        if window is not None and len(priors) > window:
            priors = priors[-window:]
            xi, J, I = xi[-window:], J[-window:], I[-window:]
        return EvaluationBatch(priors=priors, trajectories=xi, costs=J, constraints=I)


@dataclass(frozen=True)
class BoundReport:
    """Certified bounds at one (distribution, alpha) pair, with the
    additive terms that compose them."""

    alpha: float
    cost_bound: float
    constraint_bound: float
    objective: float
    cost_empirical: float
    cost_divergence: float
    constraint_empirical: float
    constraint_divergence: float
    confidence: float
    delta: float
    gamma: float
    extreme_ratio_count: int
    divergences: np.ndarray


class _BatchCache:
    """Flattened batch arrays reused across many bound evaluations."""

    def __init__(self, batch):
        L, M, D = batch.trajectories.shape
        self.L, self.M, self.D = L, M, D
        self.XI = batch.trajectories.reshape(L * M, D)
        self.XI2 = self.XI * self.XI
        logq = np.empty((L, M))
        for i, prior in enumerate(batch.priors):
            logq[i] = log_density_batch(prior, batch.trajectories[i])
        self.logq = logq.reshape(L * M)
        with np.errstate(divide="ignore"):
            self.logJ = np.log(batch.costs.reshape(L * M))
        self.violation_idx = np.flatnonzero(batch.constraints.reshape(L * M))
        # overflow to inf is fine here; it surfaces as an infeasible
        # objective rather than a wrong one
        with np.errstate(over="ignore"):
            self.max_cost_sq = batch.max_cost_per_prior ** 2
        self.max_constraint_sq = batch.max_constraint_per_prior ** 2
        self.prior_mean = np.stack([p.mean for p in batch.priors])
        self.prior_var = np.stack([p.variance for p in batch.priors])


def _log_density_flat(cache, mean, variance):
    inv_var = 1.0 / variance
    quad = (cache.XI2 @ inv_var
            - 2.0 * (cache.XI @ (mean * inv_var))
            + float(np.sum(mean * mean * inv_var)))
    logdet = float(np.sum(np.log(variance)))
    return -0.5 * (quad + logdet + cache.D * _LOG_2PI)


def _divergence_rows(cache, mean, variance):
    """Order-2 Renyi divergence of (mean, variance) from each prior."""
    v = 2.0 * cache.prior_var - variance
    if np.any(v <= 0.0):
        i, d = np.argwhere(v <= 0.0)[0]
        raise ValueError(
            "order-2 Renyi divergence is infinite against sampling "
            f"distribution {i} at dimension {d}"
        )
    delta_mu = mean - cache.prior_mean
    quad = np.sum(delta_mu * delta_mu / v, axis=1)
    logdet = 0.5 * np.sum(np.log(v) + np.log(variance)[None, :]
                          - 2.0 * np.log(cache.prior_var), axis=1)
    return quad - logdet, v, delta_mu


def _terms(cache, mean, variance, log_alpha, delta, gamma, need_grad):
    alpha = float(np.exp(log_alpha))
    L, M = cache.L, cache.M
    denom = alpha * L * M
    log_conf = float(np.log(1.0 / delta))

    logp = _log_density_flat(cache, mean, variance)
    logr = logp - cache.logq

    t_cost = log_alpha + cache.logJ + logr
    psi_cost = robust_log_from_log(t_cost)
    sum_psi_cost = float(np.sum(psi_cost))

    idx = cache.violation_idx
    t_viol = log_alpha + logr[idx]
    psi_viol = robust_log_from_log(t_viol)
    sum_psi_viol = float(np.sum(psi_viol))

    if not (np.isfinite(sum_psi_cost) and np.isfinite(sum_psi_viol)):
        bad = np.flatnonzero(~np.isfinite(psi_cost))
        where = [divmod(int(b), M) for b in bad[:5]]
        raise ValueError(f"non-finite empirical bound terms at (prior, sample) {where}")

    div_rows, v, delta_mu = _divergence_rows(cache, mean, variance)
    exp_div = np.exp(np.minimum(div_rows, _EXP_CAP))

    cost_emp = sum_psi_cost / denom
    viol_emp = sum_psi_viol / denom
    cost_div = alpha / (2.0 * L) * float(cache.max_cost_sq @ exp_div)
    viol_div = alpha / (2.0 * L) * float(cache.max_constraint_sq @ exp_div)
    conf = log_conf / denom

    cost_bound = cost_emp + cost_div + conf
    viol_bound = viol_emp + viol_div + conf
    objective = cost_bound + gamma * viol_bound

    out = {
        "alpha": alpha,
        "cost_bound": cost_bound,
        "constraint_bound": viol_bound,
        "objective": objective,
        "cost_empirical": cost_emp,
        "cost_divergence": cost_div,
        "constraint_empirical": viol_emp,
        "constraint_divergence": viol_div,
        "confidence": conf,
        "divergences": div_rows,
        "extreme_ratio_count": int(np.sum(np.abs(logr) > LOG_RATIO_LIMIT)),
    }
    if not need_grad:
        return out

    w_cost = _weight_from_log(t_cost)
    w_viol = _weight_from_log(t_viol)
    w = w_cost.copy()
    if idx.size:
        w[idx] += gamma * w_viol
    sum_w = float(np.sum(w))
    s1 = cache.XI.T @ w
    s2 = cache.XI2.T @ w

    inv_var = 1.0 / variance
    grad_mean = (s1 - mean * sum_w) * inv_var / denom
    grad_var = (s2 - 2.0 * mean * s1 + (mean * mean - variance) * sum_w) \
        * (0.5 * inv_var * inv_var) / denom

    # Divergence part: both certified quantities share the same
    # divergences, so their weights combine into one coefficient per row.
    coef = (alpha / (2.0 * L)) * (cache.max_cost_sq + gamma * cache.max_constraint_sq) * exp_div
    grad_mean = grad_mean + coef @ (2.0 * delta_mu / v)
    grad_var = grad_var + coef @ (delta_mu * delta_mu / (v * v) + 0.5 / v) \
        - float(np.sum(coef)) * 0.5 * inv_var

    # d(objective)/d(alpha), assembled from the three term families.
    sum_w_cost = float(np.sum(w_cost))
    sum_w_viol = float(np.sum(w_viol))
    d_alpha = ((sum_w_cost - sum_psi_cost) + gamma * (sum_w_viol - sum_psi_viol)) \
        / (alpha * denom)
    d_alpha += (cost_div + gamma * viol_div) / alpha
    d_alpha -= (1.0 + gamma) * log_conf / (alpha * denom)

    out["grad_mean"] = grad_mean
    out["grad_variance"] = grad_var
    out["grad_alpha"] = d_alpha
    return out


def _report_from_terms(t, delta, gamma):
    return BoundReport(
        alpha=t["alpha"], cost_bound=t["cost_bound"],
        constraint_bound=t["constraint_bound"], objective=t["objective"],
        cost_empirical=t["cost_empirical"], cost_divergence=t["cost_divergence"],
        constraint_empirical=t["constraint_empirical"],
        constraint_divergence=t["constraint_divergence"],
        confidence=t["confidence"], delta=delta, gamma=gamma,
        extreme_ratio_count=t["extreme_ratio_count"],
        divergences=t["divergences"],
    )


def _validate_args(batch, hyper, alpha, delta, gamma):
    if hyper.dim != batch.dim:
        raise ValueError("candidate dimension does not match the batch")
    if not (alpha > 0.0 and np.isfinite(alpha)):
        raise ValueError("alpha must be positive and finite")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if gamma < 0.0:
        raise ValueError("gamma must be non-negative")


def evaluate_bound(batch, hyper, alpha, delta, gamma):
    """Certified cost and violation bounds for one candidate at one alpha."""
    _validate_args(batch, hyper, alpha, delta, gamma)
    cache = _BatchCache(batch)
    t = _terms(cache, hyper.mean, hyper.variance, float(np.log(alpha)),
               delta, gamma, need_grad=False)
    return _report_from_terms(t, delta, gamma)


def bound_gradient(batch, hyper, alpha, delta, gamma, freeze_mask=None):
    """Analytic gradient of the combined objective with respect to the
    candidate mean, variance, and alpha."""
    _validate_args(batch, hyper, alpha, delta, gamma)
    cache = _BatchCache(batch)
    t = _terms(cache, hyper.mean, hyper.variance, float(np.log(alpha)),
               delta, gamma, need_grad=True)
    gm, gv = t["grad_mean"], t["grad_variance"]
    if freeze_mask is not None:
        keep = ~np.asarray(freeze_mask, dtype=bool)
        gm = gm * keep
        gv = gv * keep
    return gm, gv, float(t["grad_alpha"])


@dataclass
class BoundOptConfig:
    """Settings for one bound-optimization solve."""

    delta: float = 0.05
    gamma: float = 10.0
    freeze_mask: np.ndarray = None
    max_iterations: int = 60
    step_tolerance: float = 1e-8
    alpha_min: float = 1e-6
    alpha_max: float = 1e6
    alpha_init: float = None
    alpha_grid_points: int = 32
    variance_floor: float = 1e-8
    variance_margin: float = 1e-3


def _alpha_scan(cache, mean, variance, log_alphas, delta, gamma):
    """Objective at fixed (mean, variance) over a grid of log alphas."""
    logp = _log_density_flat(cache, mean, variance)
    logr = logp - cache.logq
    base_cost = cache.logJ + logr
    base_viol = logr[cache.violation_idx]
    div_rows, _, _ = _divergence_rows(cache, mean, variance)
    exp_div = np.exp(np.minimum(div_rows, _EXP_CAP))
    cost_div_unit = float(cache.max_cost_sq @ exp_div) / (2.0 * cache.L)
    viol_div_unit = float(cache.max_constraint_sq @ exp_div) / (2.0 * cache.L)
    log_conf = float(np.log(1.0 / delta))
    LM = cache.L * cache.M

    objs = np.empty(len(log_alphas))
    for n, la in enumerate(log_alphas):
        alpha = float(np.exp(la))
        emp_cost = float(np.sum(robust_log_from_log(la + base_cost)))
        emp_viol = float(np.sum(robust_log_from_log(la + base_viol)))
        cost_b = emp_cost / (alpha * LM) + alpha * cost_div_unit + log_conf / (alpha * LM)
        viol_b = emp_viol / (alpha * LM) + alpha * viol_div_unit + log_conf / (alpha * LM)
        objs[n] = cost_b + gamma * viol_b
    return objs


def _init_alpha(cache, mean, variance, config):
    """Coarse log grid plus golden-section refinement for the alpha that
    minimizes the objective at the initial distribution."""
    grid = np.linspace(np.log(config.alpha_min), np.log(config.alpha_max),
                       config.alpha_grid_points)
    objs = _alpha_scan(cache, mean, variance, grid, config.delta, config.gamma)
    if not np.any(np.isfinite(objs)):
        raise ValueError("bound objective is non-finite for every alpha on the grid")
    best = int(np.nanargmin(objs))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]

    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc = _alpha_scan(cache, mean, variance, [c], config.delta, config.gamma)[0]
    fd = _alpha_scan(cache, mean, variance, [d], config.delta, config.gamma)[0]
    for _ in range(20):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = _alpha_scan(cache, mean, variance, [c], config.delta, config.gamma)[0]
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = _alpha_scan(cache, mean, variance, [d], config.delta, config.gamma)[0]
    return float(0.5 * (a + b))


def optimize_bound(batch, hyper_init, config):
    """Minimize the combined certified objective over (mean, variance,
    alpha) with box constraints that keep every divergence finite.

    Returns (optimized hyperparameters, report at the optimum).  The
    result never has a worse objective than the initial point.
    """
    if hyper_init.dim != batch.dim:
        raise ValueError("initial distribution dimension does not match the batch")
    cache = _BatchCache(batch)
    D = cache.D

    var_ub = (1.0 - config.variance_margin) * 2.0 * cache.prior_var.min(axis=0)
    if np.any(var_ub <= config.variance_floor):
        raise ValueError("sampling distributions too narrow for the variance box")

    freeze = np.zeros(D, dtype=bool)
    if config.freeze_mask is not None:
        freeze = np.asarray(config.freeze_mask, dtype=bool).ravel()
        if freeze.shape != (D,):
            raise ValueError(f"freeze_mask must have length {D}")

    mean0 = hyper_init.mean.copy()
    var0 = np.clip(hyper_init.variance, config.variance_floor, var_ub)
    if np.any(freeze & (var0 != hyper_init.variance)):
        raise ValueError("frozen variance coordinates violate the divergence box")
    var0[freeze] = hyper_init.variance[freeze]

    if config.alpha_init is not None:
        log_alpha0 = float(np.log(np.clip(config.alpha_init,
                                          config.alpha_min, config.alpha_max)))
    else:
        log_alpha0 = _init_alpha(cache, mean0, var0, config)

    def pack(mean, var, la):
        return np.concatenate([mean, var, [la]])

    x0 = pack(mean0, var0, log_alpha0)
    bounds = []
    for d in range(D):
        bounds.append((mean0[d], mean0[d]) if freeze[d] else (None, None))
    for d in range(D):
        if freeze[d]:
            bounds.append((var0[d], var0[d]))
        else:
            bounds.append((config.variance_floor, var_ub[d]))
    bounds.append((float(np.log(config.alpha_min)), float(np.log(config.alpha_max))))

    def fun(x):
        t = _terms(cache, x[:D], x[D:2 * D], float(x[2 * D]),
                   config.delta, config.gamma, need_grad=True)
        g = np.concatenate([t["grad_mean"], t["grad_variance"],
                            [t["grad_alpha"] * t["alpha"]]])
        g[:D][freeze] = 0.0
        g[D:2 * D][freeze] = 0.0
        return t["objective"], g

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": config.max_iterations,
                            "ftol": config.step_tolerance,
                            "gtol": 1e-8, "maxcor": 20, "maxls": 40})

    f0 = fun(x0)[0]
    x_best = res.x if res.fun <= f0 else x0
    t = _terms(cache, x_best[:D], x_best[D:2 * D], float(x_best[2 * D]),
               config.delta, config.gamma, need_grad=False)
    hyper = PolicyHyperparams(mean=x_best[:D], variance=x_best[D:2 * D],
                              n_controls=hyper_init.n_controls,
                              n_timesteps=hyper_init.n_timesteps)
    return hyper, _report_from_terms(t, config.delta, config.gamma)
