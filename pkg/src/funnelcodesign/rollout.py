"""Backend selection for the closed-loop rollout kernels.

Imports the compiled Cython kernel when available and falls back to the
pure-Python implementation otherwise. Set FUNNELCODESIGN_PURE_PY=1 to
force the fallback (used by the backend-comparison benchmark and tests).
"""

import os

if os.environ.get("FUNNELCODESIGN_PURE_PY"):
    from . import _rollout_py as _backend
else:
    try:
        from . import _rollout_cy as _backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _rollout_py as _backend

BACKEND = _backend.BACKEND
rollout_tracking = _backend.rollout_tracking
rollout_hold = _backend.rollout_hold


import numpy as np


def closed_loop_rates(model, traj, sched):
    """Closed-loop spectral radius |eig(A - B K)| at every knot [1/s]."""
    A, B = model.linearize(traj.x, traj.u)
    A_cl = A - B @ sched.K
    eigs = np.linalg.eigvals(A_cl)
    return np.max(np.abs(eigs), axis=-1)


def substeps_per_interval(model, traj, sched, base: int = 10, h_rate: float = 1.0):
    """RK4 step counts per knot interval, sized for closed-loop stiffness.

    Most of the trajectory uses ``base`` substeps; intervals whose gains
    are large (the boundary layer induced by the final cost) get enough
    steps to keep step * rate <= h_rate inside the RK4 stability region.
    """
    rates = closed_loop_rates(model, traj, sched)
    dt = traj.dt
    need = np.ceil(dt * np.maximum(rates[:-1], rates[1:]) / h_rate).astype(np.int64)
    return np.maximum(need, base)


def tracking_rollout(model, traj, sched, k0, x0, substeps):
    """Convenience wrapper taking model/trajectory/schedule objects.

    ``substeps`` is the per-interval step-count array from
    :func:`substeps_per_interval`. Returns the (N, nx) knot-time states
    of the saturated closed loop started at state x0 at knot k0.
    """
    return rollout_tracking(
        model.system_id,
        model.params_vector(),
        np.ascontiguousarray(traj.t),
        np.ascontiguousarray(traj.x),
        np.ascontiguousarray(traj.u[:, 0]),
        np.ascontiguousarray(sched.K[:, 0, :]),
        int(k0),
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(substeps, dtype=np.int64),
        float(model.params.u_max),
        int(model.angle_indices[0]),
    )
