"""Time-varying LQR feedback around nominal trajectories.

Gains come from the standard finite-horizon Riccati recursion on the
linearized dynamics.  The recursion runs backward in time and is batched
over independent trajectories, which is the hot path when every sample
of a rollout batch tracks its own nominal.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import linearize_batch


@dataclass(frozen=True)
class LqrWeights:
    """Quadratic tracking weights (state, control, terminal state)."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray

    def __post_init__(self):
        Q = np.ascontiguousarray(np.asarray(self.Q, dtype=float))
        R = np.ascontiguousarray(np.asarray(self.R, dtype=float))
        Qf = np.ascontiguousarray(np.asarray(self.Qf, dtype=float))
        _check_symmetric_psd(Q, "Q")
        _check_symmetric_psd(Qf, "Qf")
        _check_symmetric_pd(R, "R")
        if Qf.shape != Q.shape:
            raise ValueError("Q and Qf must have the same shape")
        for arr in (Q, R, Qf):
            arr.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Qf", Qf)

    @classmethod
    def from_diags(cls, q_diag, r_diag, qf_diag):
        return cls(Q=np.diag(np.asarray(q_diag, dtype=float)),
                   R=np.diag(np.asarray(r_diag, dtype=float)),
                   Qf=np.diag(np.asarray(qf_diag, dtype=float)))


def _check_symmetric_psd(M, name):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) < -1e-9:
        raise ValueError(f"{name} must be positive semidefinite")


def _check_symmetric_pd(M, name):
    _check_symmetric_psd(M, name)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


@dataclass(frozen=True)
class FeedbackPolicy:
    """Nominal trajectory plus time-varying feedback gains.

    Executing at step k applies u = clamp(nominal_controls[k] +
    gains[k] @ (x - nominal_states[k])), with angle states wrapped in the
    difference.
    """

    model: object
    nominal_states: np.ndarray
    nominal_controls: np.ndarray
    gains: np.ndarray
    dt: float

    def __post_init__(self):
        xs = np.ascontiguousarray(np.asarray(self.nominal_states, dtype=float))
        us = np.ascontiguousarray(np.asarray(self.nominal_controls, dtype=float))
        K = np.ascontiguousarray(np.asarray(self.gains, dtype=float))
        T = us.shape[0]
        S = self.model.state_dim
        N = self.model.control_dim
        if xs.shape != (T + 1, S):
            raise ValueError(f"nominal_states must have shape ({T + 1}, {S})")
        if us.shape != (T, N):
            raise ValueError(f"nominal_controls must have shape ({T}, {N})")
        if K.shape != (T, N, S):
            raise ValueError(f"gains must have shape ({T}, {N}, {S})")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us)) and np.all(np.isfinite(K))):
            raise ValueError("feedback policy arrays must be finite")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        for arr in (xs, us, K):
            arr.flags.writeable = False
        object.__setattr__(self, "nominal_states", xs)
        object.__setattr__(self, "nominal_controls", us)
        object.__setattr__(self, "gains", K)

    @property
    def horizon(self):
        return int(self.nominal_controls.shape[0])


def apply_feedback(policy, k, x):
    """Control at step k for plant state x, clamped to the control box."""
    if not 0 <= k < policy.horizon:
        raise IndexError(f"step {k} outside horizon {policy.horizon}")
    dx = policy.model.state_difference(x, policy.nominal_states[k])
    u = policy.nominal_controls[k] + policy.gains[k] @ dx
    return policy.model.clamp_controls(u)


def riccati_gains_batch(A, B, weights, return_value_matrices=False):
    """Backward Riccati recursion batched over trajectories.

    A has shape (m, T, S, S) and B (m, T, S, N); returns gains of shape
    (m, T, N, S) with the convention u = nominal + K @ (x - x_nominal).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    m, T, S, _ = A.shape
    N = B.shape[3]
    Q, R, Qf = weights.Q, weights.R, weights.Qf
    if Q.shape != (S, S) or R.shape != (N, N):
        raise ValueError("weight dimensions do not match the linearization")

    K = np.empty((m, T, N, S))
    P = np.broadcast_to(Qf, (m, S, S)).copy()
    Ps = np.empty((m, T + 1, S, S)) if return_value_matrices else None
    if return_value_matrices:
        Ps[:, T] = P
    for k in range(T - 1, -1, -1):
        Ak = A[:, k]
        Bk = B[:, k]
        BtP = np.matmul(Bk.transpose(0, 2, 1), P)
        G = np.matmul(BtP, Bk) + R
        H = np.matmul(BtP, Ak)
        Kk = _solve_gain(G, H, k)
        K[:, k] = Kk
        AtP = np.matmul(Ak.transpose(0, 2, 1), P)
        P = Q + np.matmul(AtP, Ak) + np.matmul(np.matmul(AtP, Bk), Kk)
        P = 0.5 * (P + P.transpose(0, 2, 1))
        if return_value_matrices:
            Ps[:, k] = P
    if return_value_matrices:
        return K, Ps
    return K


def _solve_gain(G, H, k):
    """Solve G K = -H for K, with fast paths for 1 and 2 controls."""
    N = G.shape[1]
    if N == 1:
        g = G[:, 0, 0]
        _check_invertible(np.abs(g), np.abs(g), k)
        return -H / g[:, None, None]
    if N == 2:
        a = G[:, 0, 0]
        b = G[:, 0, 1]
        c = G[:, 1, 0]
        d = G[:, 1, 1]
        det = a * d - b * c
        scale = np.maximum(np.abs(a) + np.abs(b), np.abs(c) + np.abs(d))
        _check_invertible(np.abs(det), scale * scale, k)
        K = np.empty_like(H)
        K[:, 0] = -(d[:, None] * H[:, 0] - b[:, None] * H[:, 1]) / det[:, None]
        K[:, 1] = -(-c[:, None] * H[:, 0] + a[:, None] * H[:, 1]) / det[:, None]
        return K
    try:
        return -np.linalg.solve(G, H)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"singular control-cost matrix at timestep {k}") from exc


def _check_invertible(magnitude, scale, k):
    if np.any(magnitude <= 1e-300 * np.maximum(scale, 1.0)):
        raise RuntimeError(f"singular control-cost matrix at timestep {k}")


def compute_feedback_params(model, weights, nominal_states, nominal_controls, dt):
    """Linearize along a nominal trajectory and return its LQR policy."""
    xs = np.asarray(nominal_states, dtype=float)
    us = np.asarray(nominal_controls, dtype=float)
    T = us.shape[0]
    if xs.shape[0] != T + 1:
        raise ValueError("nominal_states must have one more row than nominal_controls")
    A, B = linearize_batch(model, xs[:-1], us, dt)
    K = riccati_gains_batch(A[None, :], B[None, :], weights)[0]
    return FeedbackPolicy(model=model, nominal_states=xs, nominal_controls=us,
                          gains=K, dt=dt)
