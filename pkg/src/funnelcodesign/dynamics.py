"""Continuous-time models of the torque-limited pendulum and the cart-pole.

Both models expose batched dynamics ``f(x, u)`` and analytic Jacobians
``linearize(x, u)``; every other module (transcription, Riccati backward
pass, funnel rollouts) builds on these plus :func:`rk4_step`.

State ordering is (q, qdot) everywhere: pendulum (theta, theta_dot) with
theta = 0 hanging down and theta = pi upright; cart-pole
(x_cart, theta, x_cart_dot, theta_dot) with the same angle convention.
No angle wrapping happens here; wrapping belongs to error coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENDULUM_ID = 0
CARTPOLE_ID = 1


@dataclass(frozen=True)
class PendulumParams:
    """Physical parameters of the torque-limited simple pendulum."""

    m: float = 0.7     # point mass [kg]
    l: float = 0.4     # link length [m]
    b: float = 0.1     # viscous damping [N m s/rad]
    g: float = 9.81    # gravity [m/s^2]
    u_max: float = 2.0  # torque limit [N m]

    def __post_init__(self):
        if self.m <= 0 or self.l <= 0 or self.g <= 0 or self.u_max <= 0:
            raise ValueError("pendulum m, l, g, u_max must be positive")
        if self.b < 0:
            raise ValueError("pendulum damping b must be non-negative")


@dataclass(frozen=True)
class CartpoleParams:
    """Physical parameters of the cart-pole.

    The cart mass default is a placeholder for the lab cart, not a
    published value; override it in the run config when it matters.
    """

    m: float = 0.23    # pole mass [kg]
    l: float = 0.18    # pole length to the point mass [m]
    M_c: float = 0.57  # cart mass [kg]
    b: float = 0.005   # pivot damping [N m s/rad]
    g: float = 9.81    # gravity [m/s^2]
    u_max: float = 5.0  # force limit [N]

    def __post_init__(self):
        if self.m <= 0 or self.l <= 0 or self.M_c <= 0 or self.g <= 0 or self.u_max <= 0:
            raise ValueError("cart-pole masses, length, g, u_max must be positive")
        if self.b < 0:
            raise ValueError("cart-pole damping b must be non-negative")


class Pendulum:
    """m l^2 thetadd = u - b thetad - m g l sin(theta)."""

    system_id = PENDULUM_ID
    nq = 1
    nx = 2
    nu = 1
    angle_indices = (0,)

    def __init__(self, params: PendulumParams):
        self.params = params

    def f(self, x, u):
        """State derivative; x (..., 2), u (..., 1) -> (..., 2)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        p = self.params
        theta = x[..., 0]
        thetad = x[..., 1]
        thetadd = (u[..., 0] - p.b * thetad - p.m * p.g * p.l * np.sin(theta)) / (p.m * p.l**2)
        return np.stack([thetad, thetadd], axis=-1)

    def linearize(self, x, u):
        """Analytic Jacobians (A, B) of f at (x, u); batched."""
        x = np.asarray(x, dtype=float)
        p = self.params
        theta = x[..., 0]
        batch = theta.shape
        A = np.zeros(batch + (2, 2))
        A[..., 0, 1] = 1.0
        A[..., 1, 0] = -(p.g / p.l) * np.cos(theta)
        A[..., 1, 1] = -p.b / (p.m * p.l**2)
        B = np.zeros(batch + (2, 1))
        B[..., 1, 0] = 1.0 / (p.m * p.l**2)
        return A, B

    def params_vector(self):
        p = self.params
        return np.array([p.m, p.l, p.b, p.g], dtype=float)


class Cartpole:
    """Frictionless cart with a damped point-mass pole.

    (M_c + m) xdd + m l c thetadd - m l s thetad^2 = u
    m l c xdd + m l^2 thetadd + b thetad + m g l s = 0
    with s = sin(theta), c = cos(theta).
    """

    system_id = CARTPOLE_ID
    nq = 2
    nx = 4
    nu = 1
    angle_indices = (1,)

    def __init__(self, params: CartpoleParams):
        self.params = params

    def f(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        p = self.params
        theta = x[..., 1]
        xd = x[..., 2]
        thetad = x[..., 3]
        s, c = np.sin(theta), np.cos(theta)
        denom = p.M_c + p.m * s**2
        xdd = (u[..., 0] + (p.b / p.l) * c * thetad + p.m * p.g * s * c
               + p.m * p.l * s * thetad**2) / denom
        thetadd = -(c * xdd) / p.l - (p.b * thetad) / (p.m * p.l**2) - (p.g / p.l) * s
        return np.stack([xd, thetad, xdd, thetadd], axis=-1)

    def linearize(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        p = self.params
        theta = x[..., 1]
        thetad = x[..., 3]
        s, c = np.sin(theta), np.cos(theta)
        denom = p.M_c + p.m * s**2
        num = u[..., 0] + (p.b / p.l) * c * thetad + p.m * p.g * s * c + p.m * p.l * s * thetad**2
        xdd = num / denom

        dnum_dth = -(p.b / p.l) * s * thetad + p.m * p.g * (c**2 - s**2) + p.m * p.l * c * thetad**2
        ddenom_dth = 2.0 * p.m * s * c
        dxdd_dth = (dnum_dth * denom - num * ddenom_dth) / denom**2
        dxdd_dthd = ((p.b / p.l) * c + 2.0 * p.m * p.l * s * thetad) / denom
        dxdd_du = 1.0 / denom

        dthdd_dth = -(-s * xdd + c * dxdd_dth) / p.l - (p.g / p.l) * c
        dthdd_dthd = -(c / p.l) * dxdd_dthd - p.b / (p.m * p.l**2)
        dthdd_du = -(c / p.l) * dxdd_du

        batch = theta.shape
        A = np.zeros(batch + (4, 4))
        A[..., 0, 2] = 1.0
        A[..., 1, 3] = 1.0
        A[..., 2, 1] = dxdd_dth
        A[..., 2, 3] = dxdd_dthd
        A[..., 3, 1] = dthdd_dth
        A[..., 3, 3] = dthdd_dthd
        B = np.zeros(batch + (4, 1))
        B[..., 2, 0] = dxdd_du
        B[..., 3, 0] = dthdd_du
        return A, B

    def params_vector(self):
        p = self.params
        return np.array([p.m, p.l, p.M_c, p.b, p.g], dtype=float)


def rk4_step(model, x, u, dt):
    """One classical Runge-Kutta step with zero-order-hold input; batched."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = model.f(x, u)
    k2 = model.f(x + 0.5 * dt * k1, u)
    k3 = model.f(x + 0.5 * dt * k2, u)
    k4 = model.f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_jacobians(model, x, u, dt):
    """Jacobians of the RK4 map w.r.t. x and u, chained through the stages.

    Returns (Phi_x, Phi_u) with shapes (..., nx, nx) and (..., nx, nu).
    """
    nx = model.nx
    eye = np.eye(nx)

    x1 = np.asarray(x, dtype=float)
    k1 = model.f(x1, u)
    A1, B1 = model.linearize(x1, u)
    dk1_dx, dk1_du = A1, B1

    x2 = x1 + 0.5 * dt * k1
    k2 = model.f(x2, u)
    A2, B2 = model.linearize(x2, u)
    dk2_dx = A2 @ (eye + 0.5 * dt * dk1_dx)
    dk2_du = A2 @ (0.5 * dt * dk1_du) + B2

    x3 = x1 + 0.5 * dt * k2
    k3 = model.f(x3, u)
    A3, B3 = model.linearize(x3, u)
    dk3_dx = A3 @ (eye + 0.5 * dt * dk2_dx)
    dk3_du = A3 @ (0.5 * dt * dk2_du) + B3

    x4 = x1 + dt * k3
    A4, B4 = model.linearize(x4, u)
    dk4_dx = A4 @ (eye + dt * dk3_dx)
    dk4_du = A4 @ (dt * dk3_du) + B4

    Phi_x = eye + (dt / 6.0) * (dk1_dx + 2.0 * dk2_dx + 2.0 * dk3_dx + dk4_dx)
    Phi_u = (dt / 6.0) * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)
    return Phi_x, Phi_u


def make_model(system: str, params=None):
    """Factory used by the config layer: 'pendulum' or 'cartpole'."""
    if system == "pendulum":
        return Pendulum(params if params is not None else PendulumParams())
    if system == "cartpole":
        return Cartpole(params if params is not None else CartpoleParams())
    raise ValueError(f"unknown system '{system}'")
