"""Time-varying LQR along a nominal trajectory.

Backward RK4 integration of the differential Riccati equation on the
trajectory's knot grid (with substeps for stiffness near the final time)
yields the cost-to-go matrices S[k] and gains K[k]; the tracking policy
is u*(t) - K(t) (x - x*(t)) with angle-wrapped error and input saturation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalBlowup

_TWO_PI = 2.0 * np.pi


@dataclass
class ControllerCosts:
    """Diagonal TVLQR cost weights."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.Qf = np.asarray(self.Qf, dtype=float)
        if np.any(self.Q < 0) or np.any(self.Qf < 0):
            raise ValueError("Q and Qf diagonals must be non-negative")
        if np.any(self.R <= 0):
            raise ValueError("R diagonal must be strictly positive")


@dataclass
class GainSchedule:
    """Per-knot Riccati matrices and feedback gains."""

    t: np.ndarray        # (N,)
    S: np.ndarray        # (N, nx, nx)
    K: np.ndarray        # (N, nu, nx)

    @property
    def N(self):
        return len(self.t)

    def to_json(self, path):
        payload = {
            "times": self.t.tolist(),
            "S": [Sk.ravel().tolist() for Sk in self.S],
            "K": [Kk.ravel().tolist() for Kk in self.K],
        }
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            payload = json.load(f)
        t = np.array(payload["times"])
        n = len(t)
        nx = int(round(len(payload["S"][0]) ** 0.5))
        S = np.array(payload["S"]).reshape(n, nx, nx)
        K = np.array(payload["K"]).reshape(n, -1, nx)
        return cls(t=t, S=S, K=K)


def wrap_angle(e):
    """Wrap to (-pi, pi]; elementwise, fmod-based to match the rollout kernels."""
    w = np.fmod(e, _TWO_PI)
    w = np.where(w > np.pi, w - _TWO_PI, w)
    w = np.where(w <= -np.pi, w + _TWO_PI, w)
    return w


def error_coords(x, x_ref, angle_indices):
    """x - x_ref with angle components wrapped to (-pi, pi]; batched."""
    e = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
    for i in angle_indices:
        e[..., i] = wrap_angle(e[..., i])
    return e


def _nominal_at(traj, t):
    """Linear interpolation of x*, zero-order hold of u*, at time t."""
    dt = traj.dt
    j = int(np.clip(np.floor((t - traj.t[0]) / dt), 0, traj.N - 2))
    a = (t - traj.t[j]) / dt
    x_nom = (1.0 - a) * traj.x[j] + a * traj.x[j + 1]
    return x_nom, traj.u[j], j, a


def solve_dre(traj, costs: ControllerCosts, model,
              rtol: float = 1e-8, atol: float = 1e-10) -> GainSchedule:
    """Integrate the Riccati equation backward from S(t_f) = Qf.

    A(t), B(t) come from the analytic linearization at the interpolated
    nominal. The backward pass is stiff near t_f (the large final cost
    decays on a sub-millisecond timescale), so an adaptive stiff
    integrator is used and sampled at the knot times; S is re-symmetrized
    at each knot and checked against a blow-up threshold.
    """
    from scipy.integrate import solve_ivp

    N = traj.N
    nx = model.nx
    Q = np.diag(costs.Q)
    R_inv = np.diag(1.0 / costs.R)

    def backward_rhs(t, y):
        S = y.reshape(nx, nx)
        S = 0.5 * (S + S.T)
        x_nom, u_nom, _, _ = _nominal_at(traj, t)
        A, B = model.linearize(x_nom, u_nom)
        G = Q - S @ B @ R_inv @ B.T @ S + S @ A + A.T @ S
        return -G.ravel()  # -Sdot = G; solve_ivp runs t from t_f down to t_0

    Sf = np.diag(costs.Qf)
    sol = solve_ivp(backward_rhs, (traj.t[-1], traj.t[0]), Sf.ravel(),
                    t_eval=traj.t[::-1], method="LSODA", rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalBlowup(f"Riccati backward pass failed: {sol.message}")
    S_knots = sol.y.T[::-1].reshape(N, nx, nx)
    S_knots = 0.5 * (S_knots + np.transpose(S_knots, (0, 2, 1)))
    S_knots[-1] = Sf
    if np.max(np.abs(S_knots)) > 1e12:
        raise NumericalBlowup("Riccati backward pass exceeded 1e12")

    K = np.empty((N, model.nu, nx))
    for k in range(N):
        _, B = model.linearize(traj.x[k], traj.u[k])
        K[k] = R_inv @ B.T @ S_knots[k]
    return GainSchedule(t=traj.t.copy(), S=S_knots, K=K)


def interp_schedule(sched: GainSchedule, t):
    """Linear interpolation of S and K at time t."""
    dt = sched.t[1] - sched.t[0]
    j = int(np.clip(np.floor((t - sched.t[0]) / dt), 0, sched.N - 2))
    a = (t - sched.t[j]) / dt
    S = (1.0 - a) * sched.S[j] + a * sched.S[j + 1]
    K = (1.0 - a) * sched.K[j] + a * sched.K[j + 1]
    return S, K


def policy(x, k_or_t, traj, sched: GainSchedule, model):
    """Saturated TVLQR tracking input at knot index (int) or time (float)."""
    if isinstance(k_or_t, (int, np.integer)):
        x_nom, u_nom, K = traj.x[k_or_t], traj.u[k_or_t], sched.K[k_or_t]
    else:
        x_nom, u_nom, _, _ = _nominal_at(traj, float(k_or_t))
        _, K = interp_schedule(sched, float(k_or_t))
    e = error_coords(x, x_nom, model.angle_indices)
    u = u_nom - K @ e
    return np.clip(u, -model.params.u_max, model.params.u_max)


def quad_value(S, e):
    """V = e^T S e for one error vector or a batch."""
    e = np.asarray(e)
    return np.einsum("...i,ij,...j->...", e, S, e)
