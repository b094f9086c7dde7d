"""Independent reference implementations used to check the library.

Everything here is written the slow, obvious way on purpose: numeric
quadrature instead of closed forms, finite differences instead of
analytic gradients, dense quadratic programs instead of Riccati
recursions, and fsum-based term-by-term accumulation instead of
vectorized evaluation.
"""

import math

import numpy as np
from scipy import integrate

from pacmpc.pac_bound import evaluate_bound
from pacmpc.policy import PolicyHyperparams


def renyi2_quadrature(mean_new, var_new, mean_prior, var_prior):
    """Order-2 Renyi divergence D2(new || prior) for diagonal Gaussians
    by 1-D numeric integration of p^2 / q in every dimension."""
    total = 0.0
    for mn, vn, mp, vp in zip(np.ravel(mean_new), np.ravel(var_new),
                              np.ravel(mean_prior), np.ravel(var_prior)):
        def integrand(x):
            lp = -0.5 * (x - mn) ** 2 / vn - 0.5 * math.log(2.0 * math.pi * vn)
            lq = -0.5 * (x - mp) ** 2 / vp - 0.5 * math.log(2.0 * math.pi * vp)
            # in log space so the far tails underflow to zero instead of 0/0
            return math.exp(max(2.0 * lp - lq, -745.0))

        value, _ = integrate.quad(integrand, -np.inf, np.inf,
                                  epsabs=1e-13, epsrel=1e-12, limit=400)
        total += math.log(value)
    return total


def gaussian_log_density_quadrature(mean, var, xi):
    """Log density of a diagonal Gaussian with the normalization constant
    recovered by numeric quadrature instead of the closed form."""
    total = 0.0
    for m, v, x in zip(np.ravel(mean), np.ravel(var), np.ravel(xi)):
        def unnormalized(t):
            return math.exp(-0.5 * (t - m) ** 2 / v)

        z, _ = integrate.quad(unnormalized, -np.inf, np.inf,
                              epsabs=1e-13, epsrel=1e-12, limit=400)
        total += -0.5 * (x - m) ** 2 / v - math.log(z)
    return total


def naive_bound_reference(batch, hyper, alpha, delta, gamma):
    """Term-by-term reimplementation of the certified bounds.

    Scalar Python floats, math.fsum accumulation, and the textbook
    expressions for the empirical, divergence, and confidence terms.
    Valid only away from the ratio and divergence clamps.
    """
    L = batch.n_priors
    M = batch.n_samples
    alpha = float(alpha)

    cost_terms = []
    viol_terms = []
    cost_div_terms = []
    viol_div_terms = []
    for i, prior in enumerate(batch.priors):
        d2_quad = []
        d2_log = []
        for vn, vp, mn, mp in zip(hyper.variance, prior.variance,
                                  hyper.mean, prior.mean):
            v = 2.0 * vp - vn
            d2_quad.append((mn - mp) ** 2 / v)
            d2_log.append(0.5 * math.log(v * vn / (vp * vp)))
        d2 = math.fsum(d2_quad) - math.fsum(d2_log)

        max_cost = 0.0
        max_viol = 0.0
        for j in range(M):
            xi = batch.trajectories[i, j]
            parts = []
            for x, mn, vn, mp, vp in zip(xi, hyper.mean, hyper.variance,
                                         prior.mean, prior.variance):
                parts.append(-0.5 * math.log(vn) - 0.5 * (x - mn) ** 2 / vn)
                parts.append(0.5 * math.log(vp) + 0.5 * (x - mp) ** 2 / vp)
            ratio = math.exp(math.fsum(parts))
            zc = alpha * float(batch.costs[i, j]) * ratio
            cost_terms.append(math.log1p(zc * (1.0 + 0.5 * zc)))
            zv = alpha * float(batch.constraints[i, j]) * ratio
            viol_terms.append(math.log1p(zv * (1.0 + 0.5 * zv)))
            max_cost = max(max_cost, float(batch.costs[i, j]))
            max_viol = max(max_viol, float(batch.constraints[i, j]))
        cost_div_terms.append(max_cost ** 2 * math.exp(d2))
        viol_div_terms.append(max_viol ** 2 * math.exp(d2))

    confidence = math.log(1.0 / delta) / (alpha * L * M)
    cost_bound = (math.fsum(cost_terms) / (alpha * L * M)
                  + alpha / (2.0 * L) * math.fsum(cost_div_terms)
                  + confidence)
    viol_bound = (math.fsum(viol_terms) / (alpha * L * M)
                  + alpha / (2.0 * L) * math.fsum(viol_div_terms)
                  + confidence)
    return cost_bound, viol_bound, cost_bound + gamma * viol_bound


def fd_objective_gradient(batch, hyper, alpha, delta, gamma, h=1e-5):
    """Central finite differences of the combined objective with respect
    to every mean coordinate, variance coordinate, and alpha."""
    def objective(mean, var, a):
        hp = PolicyHyperparams(mean=mean, variance=var,
                               n_controls=hyper.n_controls,
                               n_timesteps=hyper.n_timesteps)
        return evaluate_bound(batch, hp, a, delta, gamma).objective

    D = hyper.dim
    g_mean = np.empty(D)
    g_var = np.empty(D)
    for i in range(D):
        e = np.zeros(D)
        e[i] = h
        g_mean[i] = (objective(hyper.mean + e, hyper.variance, alpha)
                     - objective(hyper.mean - e, hyper.variance, alpha)) / (2.0 * h)
        g_var[i] = (objective(hyper.mean, hyper.variance + e, alpha)
                    - objective(hyper.mean, hyper.variance - e, alpha)) / (2.0 * h)
    g_alpha = (objective(hyper.mean, hyper.variance, alpha + h)
               - objective(hyper.mean, hyper.variance, alpha - h)) / (2.0 * h)
    return g_mean, g_var, g_alpha


def lqr_qp_optimal_cost(A, B, Q, R, Qf, x0, T):
    """Minimum of sum_k x_k' Q x_k + u_k' R u_k (k = 0..T-1) plus
    x_T' Qf x_T over the open-loop control sequence, by solving the dense
    quadratic program built from stacked prediction matrices."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    S, N = B.shape
    x0 = np.asarray(x0, dtype=float)

    # X = Phi x0 + Gam U with X stacking x_1 .. x_T
    powers = [np.eye(S)]
    for _ in range(T):
        powers.append(A @ powers[-1])
    Phi = np.vstack([powers[k] for k in range(1, T + 1)])
    Gam = np.zeros((T * S, T * N))
    for k in range(1, T + 1):
        for j in range(k):
            Gam[(k - 1) * S:k * S, j * N:(j + 1) * N] = powers[k - 1 - j] @ B

    W = np.zeros((T * S, T * S))
    for k in range(1, T):
        W[(k - 1) * S:k * S, (k - 1) * S:k * S] = Q
    W[(T - 1) * S:, (T - 1) * S:] = Qf
    Rbar = np.kron(np.eye(T), R)

    H = Gam.T @ W @ Gam + Rbar
    f = Gam.T @ W @ Phi @ x0
    U = np.linalg.solve(H, -f)
    X = Phi @ x0 + Gam @ U
    return float(x0 @ Q @ x0 + X @ W @ X + U @ Rbar @ U)


def lti_closed_loop_cost(A, B, Q, R, Qf, gains, x0):
    """Cost of running u_k = K_k x_k on the deterministic LTI system."""
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for K in gains:
        u = K @ x
        total += x @ Q @ x + u @ R @ u
        x = A @ x + B @ u
    return float(total + x @ Qf @ x)


def richardson_jacobians(model, x, u, dt, h=1e-5):
    """Discrete-step Jacobians by Richardson-extrapolated central
    differences on the full Euler step (no saturation handling)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    S = x.size
    N = u.size

    def step(xx, uu):
        return xx + dt * model.drift(xx[None], uu[None])[0]

    def column(f, base, i, hh):
        e = np.zeros_like(base)
        e[i] = hh
        d1 = (f(base + e) - f(base - e)) / (2.0 * hh)
        d2 = (f(base + 0.5 * e) - f(base - 0.5 * e)) / hh
        return (4.0 * d2 - d1) / 3.0

    A = np.column_stack([column(lambda xx: step(xx, u), x, i, h) for i in range(S)])
    Bm = np.column_stack([column(lambda uu: step(x, uu), u, j, h) for j in range(N)])
    return A, Bm
