"""TVLQR: Riccati solution quality, error coordinates, the policy."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funnelcodesign.dirtran import NominalTrajectory
from funnelcodesign.tvlqr import (ControllerCosts, GainSchedule, error_coords,
                                  interp_schedule, policy, quad_value, solve_dre,
                                  wrap_angle)

from _utils import dre_residuals, resample_trajectory


class ScalarLinear:
    """dx = a x + b u; lets the DRE be checked against the algebraic fixed point."""

    nx = 1
    nu = 1
    angle_indices = ()

    def __init__(self, a=0.0, b=1.0):
        self.a, self.b = a, b

    def f(self, x, u):
        return self.a * x + self.b * u

    def linearize(self, x, u):
        return np.array([[self.a]]), np.array([[self.b]])


def zero_trajectory(model, N=41, t_f=2.0):
    return NominalTrajectory(t=np.linspace(0.0, t_f, N),
                             x=np.zeros((N, model.nx)),
                             u=np.zeros((N, model.nu)), defect_norm=0.0)


class TestWrapAngle:
    @given(st.floats(-100.0, 100.0))
    @settings(max_examples=200, deadline=None)
    def test_range_is_half_open_pi(self, e):
        w = wrap_angle(e)
        assert -math.pi < w <= math.pi

    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_wraps_by_multiples_of_two_pi(self, e):
        w = wrap_angle(e)
        k = (e - w) / (2 * math.pi)
        assert k == pytest.approx(round(k), abs=1e-6)

    def test_identity_inside_range(self):
        for e in (-3.0, -1.0, 0.0, 1.0, 3.0):
            assert wrap_angle(e) == e

    def test_boundary_maps_to_positive_pi(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)


class TestErrorCoords:
    def test_plain_difference_without_angles(self):
        e = error_coords(np.array([1.0, 2.0]), np.array([0.5, -1.0]), ())
        assert np.allclose(e, [0.5, 3.0])

    def test_angle_dimension_wrapped(self):
        x = np.array([2 * math.pi + 0.1, 0.3])
        e = error_coords(x, np.zeros(2), (0,))
        assert e[0] == pytest.approx(0.1)
        assert e[1] == pytest.approx(0.3)


class TestSolveDre:
    def test_terminal_condition_exact(self, pendulum):
        sched = pendulum["sched"]
        Qf = np.diag(pendulum["costs"].Qf)
        assert np.array_equal(sched.S[-1], Qf)

    def test_all_s_symmetric_positive_definite(self, pendulum):
        for S in pendulum["sched"].S:
            assert np.allclose(S, S.T, atol=1e-9)
            assert np.all(np.linalg.eigvalsh(S) > 0)

    def test_scalar_algebraic_fixed_point(self):
        # a=0, b=1, q=1, r=1: the stationary Riccati solution is s=1, so
        # integrating backward from s_f=1 stays at 1 for all time
        model = ScalarLinear()
        traj = zero_trajectory(model)
        sched = solve_dre(traj, ControllerCosts(Q=[1.0], R=[1.0], Qf=[1.0]), model)
        assert np.allclose(sched.S[:, 0, 0], 1.0, atol=1e-6)
        assert np.allclose(sched.K[:, 0, 0], 1.0, atol=1e-6)

    def test_scalar_transient_matches_closed_form(self):
        # a=0, b=1, q=0, r=1: ds/dt = s^2, s(t) = 1/(t_f - t + 1)
        model = ScalarLinear()
        traj = zero_trajectory(model, N=81, t_f=2.0)
        sched = solve_dre(traj, ControllerCosts(Q=[1e-12], R=[1.0], Qf=[1.0]), model)
        expected = 1.0 / (traj.t[-1] - traj.t + 1.0)
        assert np.allclose(sched.S[:, 0, 0], expected, atol=1e-5)

    def test_residual_on_refined_grid(self, pendulum):
        # central differences on a 100x finer grid keep the oracle's own
        # truncation error below the 1e-3 relative tolerance; the final
        # interval is skipped because the stiff terminal boundary layer
        # from S(t_f) = Qf is not resolvable by finite differences
        fine = resample_trajectory(pendulum["traj"], 100)
        sched = solve_dre(fine, pendulum["costs"], pendulum["model"])
        for k in range(100, fine.N - 100, 100):
            h = fine.t[k + 1] - fine.t[k - 1]
            S_dot = (sched.S[k + 1] - sched.S[k - 1]) / h
            A, B = pendulum["model"].linearize(fine.x[k], fine.u[k])
            S = sched.S[k]
            R_inv = np.diag(1.0 / np.asarray(pendulum["costs"].R))
            G = (np.diag(np.asarray(pendulum["costs"].Q))
                 - S @ B @ R_inv @ B.T @ S + S @ A + A.T @ S)
            rel = np.max(np.abs(S_dot + G)) / max(1.0, np.max(np.abs(G)))
            assert rel <= 1e-3

    def test_grid_refinement_consistency(self, pendulum):
        # doubling the schedule grid changes S[0] by well under 1%
        fine = resample_trajectory(pendulum["traj"], 2)
        sched2 = solve_dre(fine, pendulum["costs"], pendulum["model"])
        S0_coarse = pendulum["sched"].S[0]
        S0_fine = sched2.S[0]
        assert np.max(np.abs(S0_fine - S0_coarse)) / np.max(np.abs(S0_coarse)) < 0.01


class TestPolicy:
    def test_zero_error_reproduces_nominal_input(self, pendulum):
        traj, sched, model = pendulum["traj"], pendulum["sched"], pendulum["model"]
        for k in (0, 10, 25):
            u = policy(traj.x[k], k, traj, sched, model)
            assert np.allclose(u, np.clip(traj.u[k], -model.params.u_max,
                                          model.params.u_max), atol=1e-12)

    def test_saturation(self, pendulum):
        traj, sched, model = pendulum["traj"], pendulum["sched"], pendulum["model"]
        x = traj.x[10] + np.array([2.0, 5.0])
        u = policy(x, 10, traj, sched, model)
        assert np.all(np.abs(u) <= model.params.u_max + 1e-15)

    def test_knot_time_matches_knot_index(self, pendulum):
        traj, sched, model = pendulum["traj"], pendulum["sched"], pendulum["model"]
        x = traj.x[12] + 1e-3
        by_index = policy(x, 12, traj, sched, model)
        by_time = policy(x, float(traj.t[12]), traj, sched, model)
        assert np.allclose(by_index, by_time, atol=1e-9)

    def test_interp_schedule_endpoints(self, pendulum):
        traj, sched = pendulum["traj"], pendulum["sched"]
        S0, K0 = interp_schedule(sched, float(traj.t[0]))
        assert np.allclose(S0, sched.S[0])
        assert np.allclose(K0, sched.K[0])


class TestQuadValue:
    def test_matches_direct_form(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        e = np.array([0.3, -0.7])
        assert quad_value(S, e) == pytest.approx(float(e @ S @ e))

    def test_batched(self):
        S = np.eye(2)
        es = np.array([[1.0, 0.0], [0.0, 2.0]])
        assert np.allclose(quad_value(S, es), [1.0, 4.0])


class TestSerialization:
    def test_json_round_trip_exact(self, tmp_path, pendulum):
        path = tmp_path / "gains.json"
        sched = pendulum["sched"]
        sched.to_json(path)
        back = GainSchedule.from_json(path)
        assert np.array_equal(back.t, sched.t)
        assert np.array_equal(back.S, sched.S)
        assert np.array_equal(back.K, sched.K)
