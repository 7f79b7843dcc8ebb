"""Benchmark the compiled rollout kernels against the pure-Python fallback.

Solves the default pendulum swing-up once, then times batches of
closed-loop tracking rollouts (the hot loop of funnel estimation) with
both backends and reports the speedup. Run as a script:

    python benchmarks/bench_rollout.py [--n-rollouts 200]
"""

import argparse
import importlib
import time

import numpy as np

from funnelcodesign import _rollout_py
from funnelcodesign.config import default_config
from funnelcodesign.dirtran import SolverOptions, TrajOptSetup, solve_nlp, transcribe
from funnelcodesign.dynamics import make_model, PendulumParams
from funnelcodesign.rollout import substeps_per_interval
from funnelcodesign.tvlqr import ControllerCosts, solve_dre

try:
    _rollout_cy = importlib.import_module("funnelcodesign._rollout_cy")
except ImportError:
    _rollout_cy = None


def build_problem():
    cfg = default_config("pendulum")
    model = make_model("pendulum", PendulumParams(**cfg.model))
    t = cfg.trajectory
    setup = TrajOptSetup(
        N=t.N, t_f=t.t_f, x0=t.x0, x_goal=t.x_goal, x_min=t.x_min, x_max=t.x_max,
        u_min=[-model.params.u_max], u_max=[model.params.u_max],
        Q=cfg.costs.Q, R=cfg.costs.R, Qf=[cfg.costs.qf_scale] * model.nx)
    traj, report = solve_nlp(transcribe(setup, model), SolverOptions())
    assert report.converged
    sched = solve_dre(traj, ControllerCosts(
        Q=cfg.costs.Q, R=cfg.costs.R, Qf=[cfg.costs.qf_scale] * model.nx), model)
    return model, traj, sched


def time_backend(mod, model, traj, sched, starts, sub):
    N = traj.N
    args_common = (model.system_id, model.params_vector(), traj.t, traj.x,
                   traj.u[:, 0], sched.K[:, 0, :])
    t0 = time.perf_counter()
    finals = []
    for k, x0 in starts:
        states = mod.rollout_tracking(*args_common, k, x0, sub,
                                      float(model.params.u_max),
                                      int(model.angle_indices[0]))
        finals.append(states[N - 1].copy())
    return time.perf_counter() - t0, np.asarray(finals)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-rollouts", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print("solving pendulum swing-up for the benchmark problem ...")
    model, traj, sched = build_problem()
    sub = substeps_per_interval(model, traj, sched)
    rng = np.random.default_rng(args.seed)
    starts = []
    for i in range(args.n_rollouts):
        k = int(rng.integers(0, traj.N - 1))
        starts.append((k, traj.x[k] + 0.01 * rng.standard_normal(model.nx)))

    t_py, finals_py = time_backend(_rollout_py, model, traj, sched, starts, sub)
    print(f"pure python : {t_py:8.3f}s  ({args.n_rollouts / t_py:8.1f} rollouts/s)")
    if _rollout_cy is None:
        print("compiled    : not available (extension not built)")
        return
    t_cy, finals_cy = time_backend(_rollout_cy, model, traj, sched, starts, sub)
    print(f"compiled    : {t_cy:8.3f}s  ({args.n_rollouts / t_cy:8.1f} rollouts/s)")
    print(f"speedup     : {t_py / t_cy:8.1f}x")
    err = float(np.max(np.abs(finals_py - finals_cy)))
    print(f"max |final state difference| between backends: {err:.3g}")


if __name__ == "__main__":
    main()
