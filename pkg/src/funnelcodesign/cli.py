"""Command-line entry point for the co-design pipeline.

Exit codes: 0 success, 2 config error, 3 solver failure,
4 certification failure.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .cmaes import SearchSpace, run_cmaes
from .codesign import (rtc_optimize, rtcd_optimize, run_pipeline,
                       settings_from_config, space_from_variables)
from .config import default_config, dump_config, load_config
from .dirtran import SolverOptions, TrajOptSetup, solve_nlp, transcribe
from .dynamics import make_model, CartpoleParams, PendulumParams
from .errors import (AllCandidatesFailed, CholeskyFailure, ConfigError,
                     DegenerateSchedule, GoalUnstabilizable, InfeasibleBounds,
                     NumericalBlowup)
from .funnel import (estimate_funnel, funnel_volume, goal_region_from_samples,
                     verify_funnel)
from .rollout import BACKEND
from .tvlqr import ControllerCosts, solve_dre

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATION = 4

_SOLVER_ERRORS = (NumericalBlowup, InfeasibleBounds, AllCandidatesFailed)
_CERT_ERRORS = (GoalUnstabilizable, DegenerateSchedule, CholeskyFailure)


def _load(config_path, seed, workers):
    cfg = load_config(config_path) if config_path else default_config("pendulum")
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    return cfg


def _out_dir(out, default_name):
    path = Path(out) if out else Path("runs") / default_name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _model(cfg):
    cls = PendulumParams if cfg.system == "pendulum" else CartpoleParams
    return make_model(cfg.system, cls(**cfg.model))


def _setup(cfg, model):
    t = cfg.trajectory
    return TrajOptSetup(
        N=t.N, t_f=t.t_f, x0=t.x0, x_goal=t.x_goal, x_min=t.x_min, x_max=t.x_max,
        u_min=[-model.params.u_max], u_max=[model.params.u_max],
        Q=cfg.costs.Q, R=cfg.costs.R, Qf=[cfg.costs.qf_scale] * model.nx,
    )


def _costs(cfg, model):
    return ControllerCosts(Q=cfg.costs.Q, R=cfg.costs.R,
                           Qf=[cfg.costs.qf_scale] * model.nx)


def _solve_trajectory(cfg, model):
    traj, report = solve_nlp(transcribe(_setup(cfg, model), model), SolverOptions())
    if not report.converged:
        raise NumericalBlowup(
            f"trajectory optimization did not converge (defect {report.defect_norm:.3g})")
    return traj, report


def _write_solve_report(report, path):
    with open(path, "w") as f:
        json.dump({
            "converged": bool(report.converged),
            "outer_iterations": report.outer_iterations,
            "n_evaluations": report.n_evaluations,
            "defect_norm": report.defect_norm,
            "boundary_error": report.boundary_error,
            "objective": report.objective,
        }, f, indent=2)


def _write_trace(eval_log, names, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["evaluation", *names, "fitness"])
        for row in eval_log:
            writer.writerow([row[0], *(f"{v:.17g}" for v in row[1:])])


def _certify(cfg, result, model, out, verify):
    """Write the winner's artifacts; returns the verification report or None."""
    pipe = result.pipeline
    pipe.traj.to_csv(out / "trajectory.csv")
    pipe.sched.to_json(out / "gains.json")
    pipe.funnel.to_json(out / "funnel.json")
    pipe.funnel.projection_to_csv(out / "funnel_projection.csv")
    if not verify:
        return None
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    report = verify_funnel(pipe.funnel, pipe.traj, pipe.sched, pipe.goal, model,
                           n_samples=cfg.funnel.verify_samples, rng=rng,
                           substeps=cfg.funnel.substeps)
    report.to_json(out / "verification.json")
    return report


def _run(body):
    try:
        body()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except _SOLVER_ERRORS as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    except _CERT_ERRORS as exc:
        click.echo(f"certification failure: {exc}", err=True)
        sys.exit(EXIT_CERTIFICATION)


def _common(func):
    func = click.option("--config", "config_path", type=click.Path(), default=None,
                        help="YAML run configuration (defaults: pendulum)")(func)
    func = click.option("--seed", type=int, default=None, help="override RNG seed")(func)
    func = click.option("--workers", type=int, default=None,
                        help="override worker count")(func)
    func = click.option("--out", type=click.Path(), default=None,
                        help="output directory")(func)
    return func


@click.group()
def main():
    """Co-design toolkit: swing-up trajectories, TVLQR funnels, CMA-ES layers."""


@main.command()
@_common
def trajopt(config_path, seed, workers, out):
    """Solve the swing-up trajectory optimization problem."""
    def body():
        cfg = _load(config_path, seed, workers)
        directory = _out_dir(out, f"trajopt-{cfg.system}")
        dump_config(cfg, directory / "config.yaml")
        model = _model(cfg)
        t0 = time.perf_counter()
        traj, report = _solve_trajectory(cfg, model)
        traj.to_csv(directory / "trajectory.csv")
        _write_solve_report(report, directory / "solve_report.json")
        click.echo(f"converged in {time.perf_counter() - t0:.1f}s, "
                   f"max defect {report.defect_norm:.3g}, "
                   f"objective {report.objective:.6g} -> {directory}")
    _run(body)


@main.command()
@_common
def tvlqr(config_path, seed, workers, out):
    """Solve the trajectory and its time-varying LQR gain schedule."""
    def body():
        cfg = _load(config_path, seed, workers)
        directory = _out_dir(out, f"tvlqr-{cfg.system}")
        dump_config(cfg, directory / "config.yaml")
        model = _model(cfg)
        traj, report = _solve_trajectory(cfg, model)
        sched = solve_dre(traj, _costs(cfg, model), model)
        traj.to_csv(directory / "trajectory.csv")
        _write_solve_report(report, directory / "solve_report.json")
        sched.to_json(directory / "gains.json")
        click.echo(f"gain schedule with {traj.N} knots -> {directory}")
    _run(body)


def _funnel_body(config_path, seed, workers, out, verify, default_prefix):
    cfg = _load(config_path, seed, workers)
    directory = _out_dir(out, f"{default_prefix}-{cfg.system}")
    dump_config(cfg, directory / "config.yaml")
    model = _model(cfg)
    traj, _ = _solve_trajectory(cfg, model)
    costs = _costs(cfg, model)
    sched = solve_dre(traj, costs, model)
    rng = np.random.default_rng(cfg.seed)
    goal = goal_region_from_samples(sched, traj, model, rng, costs,
                                    rho_init=cfg.goal.rho_init,
                                    t_hold=cfg.goal.t_hold, budget=cfg.goal.budget,
                                    substeps=cfg.funnel.substeps)
    funnel, est_report = estimate_funnel(traj, sched, goal, model,
                                         budget=cfg.funnel.budget, rng=rng,
                                         rho_init=cfg.funnel.rho_init,
                                         substeps=cfg.funnel.substeps)
    traj.to_csv(directory / "trajectory.csv")
    sched.to_json(directory / "gains.json")
    funnel.to_json(directory / "funnel.json")
    funnel.projection_to_csv(directory / "funnel_projection.csv")
    volume = funnel_volume(funnel)
    click.echo(f"funnel volume {volume:.6g} over {funnel.N} knots "
               f"({est_report.n_simulations} simulations, "
               f"{est_report.wall_time:.1f}s) -> {directory}")
    if verify:
        vrng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
        report = verify_funnel(funnel, traj, sched, goal, model,
                               n_samples=cfg.funnel.verify_samples, rng=vrng,
                               substeps=cfg.funnel.substeps)
        report.to_json(directory / "verification.json")
        click.echo(f"verification: {report.successes}/{report.n_samples} "
                   f"({report.success_rate:.1%}) stabilized")


@main.command()
@_common
@click.option("--verify", is_flag=True, help="add an independent verification run")
def funnel(config_path, seed, workers, out, verify):
    """Estimate the simulation-certified funnel for the default pipeline."""
    _run(lambda: _funnel_body(config_path, seed, workers, out, verify, "funnel"))


@main.command()
@_common
def verify(config_path, seed, workers, out):
    """Estimate the funnel and always run independent verification."""
    _run(lambda: _funnel_body(config_path, seed, workers, out, True, "verify"))


def _report_codesign(cfg, result, model, directory, names):
    _write_trace(result.eval_log, names, directory / "trace.csv")
    verification = _certify(cfg, result, model, directory, verify=True)
    lines = [
        f"system: {cfg.system}",
        f"evaluations: {result.n_evaluations}",
        f"baseline volume: {result.baseline_volume:.6g}",
        f"best volume: {result.best_volume:.6g}",
        f"volume ratio (matched budgets): {result.volume_ratio:.4f}",
        "best hyperparameters: " + ", ".join(
            f"{n}={v:.6g}" for n, v in zip(("Q11", "Q22", "R11"), result.best_hyper)),
    ]
    if result.best_design:
        lines.append("best design: " + ", ".join(
            f"{n}={v:.6g}" for n, v in result.best_design.items()))
    if result.final_volume is not None:
        lines.append(f"final re-certified volume: {result.final_volume:.6g}")
    if verification is not None:
        lines.append(f"verification: {verification.successes}/"
                     f"{verification.n_samples} stabilized")
    (directory / "summary.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        click.echo(line)


@main.command()
@_common
def rtc(config_path, seed, workers, out):
    """Co-optimize the trajectory/controller cost weights (inner layer)."""
    def body():
        cfg = _load(config_path, seed, workers)
        directory = _out_dir(out, f"rtc-{cfg.system}")
        dump_config(cfg, directory / "config.yaml")
        settings = settings_from_config(cfg)
        space = space_from_variables(cfg.rtc.variables, ("Q11", "Q22", "R11"))
        initial = [cfg.rtc.variables[n].init for n in space.names]
        result = rtc_optimize(settings, space, initial, cfg.rtc.budget, cfg.seed,
                              workers=cfg.workers,
                              final_funnel_budget=cfg.rtc.final_budget)
        _report_codesign(cfg, result, settings.make_model(), directory, space.names)
    _run(body)


@main.command()
@_common
def rtcd(config_path, seed, workers, out):
    """Co-optimize design parameters with the inner layer as evaluator."""
    def body():
        cfg = _load(config_path, seed, workers)
        directory = _out_dir(out, f"rtcd-{cfg.system}")
        dump_config(cfg, directory / "config.yaml")
        settings = settings_from_config(cfg)
        hyper_space = space_from_variables(cfg.rtc.variables, ("Q11", "Q22", "R11"))
        initial_hyper = [cfg.rtc.variables[n].init for n in hyper_space.names]
        design_space = space_from_variables(cfg.rtcd.variables, ("m", "l"))
        initial_design = {n: cfg.rtcd.variables[n].init for n in design_space.names}
        result = rtcd_optimize(settings, hyper_space, initial_hyper, design_space,
                               initial_design, cfg.rtcd.outer_budget,
                               cfg.rtcd.inner_budget, cfg.seed, workers=cfg.workers,
                               final_funnel_budget=cfg.rtc.final_budget)
        model = settings.make_model(result.best_design)
        _report_codesign(cfg, result, model, directory, design_space.names)
    _run(body)


@main.command("bench-cmaes")
@click.option("--seed", type=int, default=1, help="RNG seed")
@click.option("--out", type=click.Path(), default=None, help="output directory")
def bench_cmaes(seed, out):
    """Run the CMA-ES implementation on standard test functions."""
    def sphere(xs):
        return [float(np.sum(x ** 2)) for x in xs]

    def rosenbrock(xs):
        return [float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))
                for x in xs]

    rows = []
    for name, fn, d, budget in (("sphere", sphere, 10, 5000),
                                ("rosenbrock", rosenbrock, 5, 20000)):
        space = SearchSpace(names=[f"x{i}" for i in range(d)],
                            lower=-5 * np.ones(d), upper=5 * np.ones(d))
        t0 = time.perf_counter()
        _, best_f, history = run_cmaes(fn, space, budget,
                                       np.random.default_rng(seed),
                                       x0=2.0 * np.ones(d))
        dt = time.perf_counter() - t0
        rows.append((name, d, budget, best_f, dt))
        click.echo(f"{name:12s} d={d:2d} budget={budget:6d} "
                   f"best={best_f:.3e} time={dt:.2f}s (backend: {BACKEND})")
    if out:
        directory = _out_dir(out, "bench-cmaes")
        with open(directory / "bench_cmaes.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["function", "dim", "budget", "best_f", "seconds"])
            writer.writerows(rows)


if __name__ == "__main__":
    main()
