"""Shared fixtures: the expensive pipeline artifacts are solved once."""

import time

import numpy as np
import pytest

from funnelcodesign.config import default_config
from funnelcodesign.dirtran import SolverOptions, TrajOptSetup, solve_nlp, transcribe
from funnelcodesign.dynamics import make_model, CartpoleParams, PendulumParams
from funnelcodesign.funnel import estimate_funnel, goal_region_from_samples
from funnelcodesign.tvlqr import ControllerCosts, solve_dre


def build_setup(cfg, model):
    t = cfg.trajectory
    return TrajOptSetup(
        N=t.N, t_f=t.t_f, x0=t.x0, x_goal=t.x_goal, x_min=t.x_min, x_max=t.x_max,
        u_min=[-model.params.u_max], u_max=[model.params.u_max],
        Q=cfg.costs.Q, R=cfg.costs.R, Qf=[cfg.costs.qf_scale] * model.nx)


def build_costs(cfg, model):
    return ControllerCosts(Q=cfg.costs.Q, R=cfg.costs.R,
                           Qf=[cfg.costs.qf_scale] * model.nx)


def _solve_system(system):
    cfg = default_config(system)
    cls = PendulumParams if system == "pendulum" else CartpoleParams
    model = make_model(system, cls(**cfg.model))
    t0 = time.perf_counter()
    traj, report = solve_nlp(transcribe(build_setup(cfg, model), model),
                             SolverOptions())
    solve_time = time.perf_counter() - t0
    costs = build_costs(cfg, model)
    sched = solve_dre(traj, costs, model)
    return {"config": cfg, "model": model, "traj": traj, "report": report,
            "sched": sched, "costs": costs, "solve_time": solve_time}


@pytest.fixture(scope="session")
def pendulum():
    """Solved default pendulum swing-up with its gain schedule."""
    return _solve_system("pendulum")


@pytest.fixture(scope="session")
def cartpole():
    """Solved default cart-pole swing-up with its gain schedule."""
    return _solve_system("cartpole")


def _certify_system(sol, seed):
    cfg = sol["config"]
    rng = np.random.default_rng(seed)
    goal = goal_region_from_samples(
        sol["sched"], sol["traj"], sol["model"], rng, sol["costs"],
        rho_init=cfg.goal.rho_init, t_hold=cfg.goal.t_hold,
        budget=cfg.goal.budget, substeps=cfg.funnel.substeps)
    t0 = time.perf_counter()
    funnel, report = estimate_funnel(
        sol["traj"], sol["sched"], goal, sol["model"], budget=cfg.funnel.budget,
        rng=rng, rho_init=cfg.funnel.rho_init, substeps=cfg.funnel.substeps)
    return {**sol, "goal": goal, "funnel": funnel, "funnel_report": report,
            "estimate_time": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def pendulum_certified(pendulum):
    """Pendulum funnel estimated at the default budget (100 samples/knot)."""
    return _certify_system(pendulum, seed=12345)


@pytest.fixture(scope="session")
def cartpole_certified(cartpole):
    """Cart-pole funnel estimated at the default budget (100 samples/knot)."""
    return _certify_system(cartpole, seed=12345)
