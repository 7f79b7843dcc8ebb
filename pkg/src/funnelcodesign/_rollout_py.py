"""Pure-Python closed-loop rollout kernels.

Fallback for the compiled extension in ``_rollout_cy``; same semantics,
same operation order, just slow. Keep the two files in sync.

Conventions shared by both backends:
  * p = 1 actuator, gains are row vectors K[k] of length nx
  * nominal state and gain are linearly interpolated between knots,
    the nominal input is zero-order-held
  * the angle error component is wrapped to (-pi, pi]
  * the input is saturated to [-u_max, u_max] after feedback
  * integration is RK4 with the input held over each substep
"""

import math

import numpy as np

from .dynamics import CARTPOLE_ID, PENDULUM_ID

_TWO_PI = 2.0 * math.pi

BACKEND = "python"


def _wrap_angle(e):
    w = math.fmod(e, _TWO_PI)
    if w > math.pi:
        w -= _TWO_PI
    elif w <= -math.pi:
        w += _TWO_PI
    return w


def _dyn(system_id, p, x, u):
    if system_id == PENDULUM_ID:
        m, l, b, g = p
        theta, thetad = x
        thetadd = (u - b * thetad - m * g * l * math.sin(theta)) / (m * l * l)
        return np.array([thetad, thetadd])
    if system_id == CARTPOLE_ID:
        m, l, M_c, b, g = p
        theta, xd, thetad = x[1], x[2], x[3]
        s, c = math.sin(theta), math.cos(theta)
        denom = M_c + m * s * s
        xdd = (u + (b / l) * c * thetad + m * g * s * c + m * l * s * thetad * thetad) / denom
        thetadd = -(c * xdd) / l - (b * thetad) / (m * l * l) - (g / l) * s
        return np.array([xd, thetad, xdd, thetadd])
    raise ValueError(f"unknown system id {system_id}")


def _rk4(system_id, p, x, u, dt):
    k1 = _dyn(system_id, p, x, u)
    k2 = _dyn(system_id, p, x + 0.5 * dt * k1, u)
    k3 = _dyn(system_id, p, x + 0.5 * dt * k2, u)
    k4 = _dyn(system_id, p, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _feedback(x, x_ref, u_ref, K, u_max, angle_idx):
    err = x - x_ref
    err[angle_idx] = _wrap_angle(err[angle_idx])
    u = u_ref - float(K @ err)
    return min(max(u, -u_max), u_max)


def rollout_tracking(system_id, params, ts, xs, us, Ks, k0, x0, substeps, u_max, angle_idx):
    """Simulate the saturated tracking loop from knot k0 to the final time.

    ``substeps`` gives the RK4 step count per knot interval (length N-1).
    Returns an (N, nx) array whose rows k0..N-1 hold the state at each
    knot time; rows before k0 are NaN.
    """
    N = len(ts)
    out = np.full((N, xs.shape[1]), np.nan)
    x = np.array(x0, dtype=float)
    out[k0] = x
    for j in range(k0, N - 1):
        nsub = int(substeps[j])
        dt_sub = (ts[j + 1] - ts[j]) / nsub
        for s in range(nsub):
            a = s / nsub
            x_ref = (1.0 - a) * xs[j] + a * xs[j + 1]
            K = (1.0 - a) * Ks[j] + a * Ks[j + 1]
            u = _feedback(x, x_ref, us[j], K, u_max, angle_idx)
            x = _rk4(system_id, params, x, u, dt_sub)
        out[j + 1] = x
    return out


def rollout_hold(system_id, params, x_ref, u_ref, K, x0, dt, n_steps, u_max, angle_idx):
    """Simulate a constant-gain hold at a fixed point; returns (n_steps+1, nx)."""
    nx = len(x_ref)
    out = np.empty((n_steps + 1, nx))
    x = np.array(x0, dtype=float)
    out[0] = x
    for s in range(n_steps):
        u = _feedback(x, np.array(x_ref, dtype=float), u_ref, K, u_max, angle_idx)
        x = _rk4(system_id, params, x, u, dt)
        out[s + 1] = x
    return out
