# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled closed-loop rollout kernels.

Semantics mirror ``_rollout_py`` exactly; see that module for the shared
conventions. Only the hot per-step loop lives here.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sin, cos, fmod, M_PI

cnp.import_array()

BACKEND = "cython"

DEF MAX_NX = 4

cdef int PENDULUM_ID = 0
cdef int CARTPOLE_ID = 1


cdef inline double _wrap_angle(double e) nogil:
    cdef double w = fmod(e, 2.0 * M_PI)
    if w > M_PI:
        w -= 2.0 * M_PI
    elif w <= -M_PI:
        w += 2.0 * M_PI
    return w


cdef inline void _dyn(int system_id, double* p, double* x, double u, double* out) nogil:
    cdef double m, l, M_c, b, g, theta, thetad, xd, s, c, denom, xdd, thetadd
    if system_id == PENDULUM_ID:
        m = p[0]; l = p[1]; b = p[2]; g = p[3]
        theta = x[0]; thetad = x[1]
        out[0] = thetad
        out[1] = (u - b * thetad - m * g * l * sin(theta)) / (m * l * l)
    else:
        m = p[0]; l = p[1]; M_c = p[2]; b = p[3]; g = p[4]
        theta = x[1]; xd = x[2]; thetad = x[3]
        s = sin(theta); c = cos(theta)
        denom = M_c + m * s * s
        xdd = (u + (b / l) * c * thetad + m * g * s * c + m * l * s * thetad * thetad) / denom
        thetadd = -(c * xdd) / l - (b * thetad) / (m * l * l) - (g / l) * s
        out[0] = xd
        out[1] = thetad
        out[2] = xdd
        out[3] = thetadd


cdef inline void _rk4(int system_id, double* p, double* x, double u, double dt, int nx) nogil:
    cdef double k1[MAX_NX]
    cdef double k2[MAX_NX]
    cdef double k3[MAX_NX]
    cdef double k4[MAX_NX]
    cdef double tmp[MAX_NX]
    cdef int i
    _dyn(system_id, p, x, u, k1)
    for i in range(nx):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _dyn(system_id, p, tmp, u, k2)
    for i in range(nx):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _dyn(system_id, p, tmp, u, k3)
    for i in range(nx):
        tmp[i] = x[i] + dt * k3[i]
    _dyn(system_id, p, tmp, u, k4)
    for i in range(nx):
        x[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


cdef inline double _feedback(double* x, double* x_ref, double u_ref, double* K,
                             double u_max, int angle_idx, int nx) nogil:
    cdef double err
    cdef double u = u_ref
    cdef int i
    for i in range(nx):
        err = x[i] - x_ref[i]
        if i == angle_idx:
            err = _wrap_angle(err)
        u -= K[i] * err
    if u > u_max:
        u = u_max
    elif u < -u_max:
        u = -u_max
    return u


def rollout_tracking(int system_id, double[::1] params, double[::1] ts,
                     double[:, ::1] xs, double[::1] us, double[:, ::1] Ks,
                     int k0, double[::1] x0, long[::1] substeps, double u_max,
                     int angle_idx):
    """Simulate the saturated tracking loop from knot k0 to the final time.

    ``substeps`` gives the RK4 step count per knot interval (length N-1).
    Returns an (N, nx) array whose rows k0..N-1 hold the state at each
    knot time; rows before k0 are NaN.
    """
    cdef int N = ts.shape[0]
    cdef int nx = xs.shape[1]
    out_arr = np.full((N, nx), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef double x[MAX_NX]
    cdef double x_ref[MAX_NX]
    cdef double K[MAX_NX]
    cdef double p[5]
    cdef int i, j, s
    cdef long nsub
    cdef double a, dt_sub, u
    for i in range(params.shape[0]):
        p[i] = params[i]
    for i in range(nx):
        x[i] = x0[i]
        out[k0, i] = x[i]
    with nogil:
        for j in range(k0, N - 1):
            nsub = substeps[j]
            dt_sub = (ts[j + 1] - ts[j]) / nsub
            for s in range(nsub):
                a = (<double> s) / nsub
                for i in range(nx):
                    x_ref[i] = (1.0 - a) * xs[j, i] + a * xs[j + 1, i]
                    K[i] = (1.0 - a) * Ks[j, i] + a * Ks[j + 1, i]
                u = _feedback(x, x_ref, us[j], K, u_max, angle_idx, nx)
                _rk4(system_id, p, x, u, dt_sub, nx)
            for i in range(nx):
                out[j + 1, i] = x[i]
    return out_arr


def rollout_hold(int system_id, double[::1] params, double[::1] x_ref_in,
                 double u_ref, double[::1] K_in, double[::1] x0, double dt,
                 int n_steps, double u_max, int angle_idx):
    """Simulate a constant-gain hold at a fixed point; returns (n_steps+1, nx)."""
    cdef int nx = x_ref_in.shape[0]
    out_arr = np.empty((n_steps + 1, nx))
    cdef double[:, ::1] out = out_arr
    cdef double x[MAX_NX]
    cdef double x_ref[MAX_NX]
    cdef double K[MAX_NX]
    cdef double p[5]
    cdef int i, s
    cdef double u
    for i in range(params.shape[0]):
        p[i] = params[i]
    for i in range(nx):
        x[i] = x0[i]
        x_ref[i] = x_ref_in[i]
        K[i] = K_in[i]
        out[0, i] = x[i]
    with nogil:
        for s in range(n_steps):
            u = _feedback(x, x_ref, u_ref, K, u_max, angle_idx, nx)
            _rk4(system_id, p, x, u, dt, nx)
            for i in range(nx):
                out[s + 1, i] = x[i]
    return out_arr
