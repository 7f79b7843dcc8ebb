"""Bi-level co-design: hyperparameter and design optimization layers.

The inner layer searches the shared trajectory/controller cost weights
(Q11, Q22, R11) to maximize the certified funnel volume of the resulting
stabilized swing-up. The outer layer wraps the inner one and additionally
varies physical design parameters. Both layers are CMA-ES runs whose
objective is the negated funnel volume; any pipeline failure (trajectory
optimization not converging, Riccati blow-up, unstabilizable goal) maps
to +inf fitness instead of aborting the search.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cmaes import SearchSpace, ask, CmaesState, tell, default_population_size
from .dirtran import SolverOptions, TrajOptSetup, solve_nlp, transcribe
from .dynamics import make_model, CartpoleParams, PendulumParams
from .errors import (AllCandidatesFailed, CholeskyFailure, GoalUnstabilizable,
                     InfeasibleBounds, NumericalBlowup)
from .funnel import (estimate_funnel, funnel_volume, goal_region_from_samples,
                     verify_funnel)
from .tvlqr import ControllerCosts, solve_dre


@dataclass
class PipelineSettings:
    """Everything needed to evaluate one (design, hyperparameters) candidate."""

    system: str
    model_params: dict
    N: int
    t_f: float
    x0: list
    x_goal: list
    x_min: list
    x_max: list
    qf_scale: float = 100.0
    fixed_q_tail: tuple = ()       # cart-pole: velocity weights pinned to 1
    funnel_budget: int = 30
    rho_init: float = 1.0
    goal_rho_init: float = 1.0
    goal_t_hold: float = 2.0
    goal_budget: int = 50
    substeps: int = 10
    solver: SolverOptions = field(default_factory=SolverOptions)

    def make_model(self, design_overrides=None):
        params = dict(self.model_params)
        if design_overrides:
            params.update(design_overrides)
        cls = PendulumParams if self.system == "pendulum" else CartpoleParams
        return make_model(self.system, cls(**params))


@dataclass
class PipelineResult:
    """Artifacts of one successful pipeline evaluation."""

    volume: float
    traj: object
    sched: object
    funnel: object
    goal: object
    solve_report: object
    estimation_report: object


def run_pipeline(settings: PipelineSettings, hyper, seed, design_overrides=None,
                 seed_traj=None, funnel_budget=None) -> PipelineResult:
    """DIRTRAN -> TVLQR -> goal region -> funnel for one candidate.

    ``hyper`` is (Q11, Q22, R11); raises the stage's exception on failure
    (callers doing search convert those to +inf fitness).
    """
    model = settings.make_model(design_overrides)
    q_diag = [float(hyper[0]), float(hyper[1]), *settings.fixed_q_tail]
    r_diag = [float(hyper[2])]
    qf_diag = [settings.qf_scale] * model.nx
    setup = TrajOptSetup(
        N=settings.N, t_f=settings.t_f, x0=settings.x0, x_goal=settings.x_goal,
        x_min=settings.x_min, x_max=settings.x_max,
        u_min=[-model.params.u_max], u_max=[model.params.u_max],
        Q=q_diag, R=r_diag, Qf=qf_diag,
    )
    traj, report = solve_nlp(transcribe(setup, model), settings.solver, seed=seed_traj)
    if not report.converged:
        raise NumericalBlowup("trajectory optimization did not converge")
    costs = ControllerCosts(Q=q_diag, R=r_diag, Qf=qf_diag)
    sched = solve_dre(traj, costs, model)
    rng = np.random.default_rng(seed)
    goal = goal_region_from_samples(
        sched, traj, model, rng, costs, rho_init=settings.goal_rho_init,
        t_hold=settings.goal_t_hold, budget=settings.goal_budget,
        substeps=settings.substeps,
    )
    fun, est_report = estimate_funnel(
        traj, sched, goal, model,
        budget=funnel_budget if funnel_budget is not None else settings.funnel_budget,
        rng=rng, rho_init=settings.rho_init, substeps=settings.substeps,
    )
    return PipelineResult(
        volume=funnel_volume(fun), traj=traj, sched=sched, funnel=fun, goal=goal,
        solve_report=report, estimation_report=est_report,
    )


def _fitness_task(args):
    """Worker entry point: returns (index, fitness) with failures as +inf."""
    settings, hyper, seed, design, seed_traj, index = args
    try:
        result = run_pipeline(settings, hyper, seed, design_overrides=design,
                              seed_traj=seed_traj)
        return index, -result.volume
    except (NumericalBlowup, GoalUnstabilizable, CholeskyFailure, InfeasibleBounds,
            np.linalg.LinAlgError, ValueError):
        return index, np.inf


def _eval_seed(master_seed, index):
    """Deterministic per-evaluation seed, independent of worker scheduling."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def settings_from_config(cfg) -> PipelineSettings:
    """Pipeline settings for the objective layer of a RunConfig."""
    t = cfg.trajectory
    return PipelineSettings(
        system=cfg.system, model_params=dict(cfg.model),
        N=t.N, t_f=t.t_f, x0=list(t.x0), x_goal=list(t.x_goal),
        x_min=list(t.x_min), x_max=list(t.x_max),
        qf_scale=cfg.costs.qf_scale, fixed_q_tail=tuple(cfg.costs.Q[2:]),
        funnel_budget=cfg.rtc.objective_budget, rho_init=cfg.funnel.rho_init,
        goal_rho_init=cfg.goal.rho_init, goal_t_hold=cfg.goal.t_hold,
        goal_budget=cfg.goal.budget, substeps=cfg.funnel.substeps,
    )


def space_from_variables(variables: dict, order) -> SearchSpace:
    """SearchSpace over the named VariableSpecs in canonical order."""
    names = [n for n in order if n in variables]
    return SearchSpace(
        names=names,
        lower=np.array([variables[n].lower for n in names]),
        upper=np.array([variables[n].upper for n in names]),
        scales=[variables[n].scale for n in names],
    )


@dataclass
class CodesignResult:
    system: str
    best_hyper: np.ndarray
    best_design: dict | None
    best_volume: float            # at the objective's funnel budget
    baseline_volume: float        # initial decision point, same budget
    volume_ratio: float
    final_volume: float | None    # winner re-estimated at the final budget
    pipeline: PipelineResult | None
    eval_log: list                # (index, hyper..., design..., fitness)
    n_evaluations: int


def rtc_objective(settings: PipelineSettings, hyper, master_seed, index,
                  design=None, seed_traj=None) -> float:
    """Negated funnel volume of one hyperparameter candidate; +inf on failure."""
    return _fitness_task((settings, np.asarray(hyper, dtype=float),
                          _eval_seed(master_seed, index), design, seed_traj, index))[1]


def _evaluate_batch(pool, settings, candidates, master_seed, start_index,
                    design, seed_traj):
    tasks = [
        (settings, np.asarray(c, dtype=float), _eval_seed(master_seed, start_index + i),
         design, seed_traj, start_index + i)
        for i, c in enumerate(candidates)
    ]
    if pool is None:
        results = [_fitness_task(t) for t in tasks]
    else:
        results = list(pool.map(_fitness_task, tasks))
    results.sort(key=lambda r: r[0])
    return [f for _, f in results]


def rtc_optimize(settings: PipelineSettings, space: SearchSpace, initial_hyper,
                 budget: int, master_seed: int, workers: int = 1,
                 design=None, final_funnel_budget: int | None = None,
                 warm_start: bool = True) -> CodesignResult:
    """Inner-layer search over the shared cost weights for a fixed design.

    The initial decision point is evaluated first (it seeds the CMA-ES
    mean and the best-so-far bookkeeping, so the reported volume ratio is
    >= 1 by construction) and its nominal trajectory warm-starts the
    candidate solves. Candidate fitness evaluations of one generation run
    on a worker pool; batches and per-evaluation seeds are fixed up
    front, so the worker count never changes the result.
    """
    initial_hyper = np.asarray(initial_hyper, dtype=float)
    eval_log = []
    seed_traj = None
    baseline_fit = np.inf
    n_evals = 0
    best_hyper, best_fit = initial_hyper.copy(), np.inf
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(2**31,)))
        state = CmaesState.init(space, x0=np.clip(initial_hyper, space.lower, space.upper))
        while n_evals + state.lam <= budget:
            cands = ask(state, rng)
            if n_evals == 0:
                # inject the initial decision point into the first
                # generation so the reported ratio is >= 1 by construction
                cands = cands.copy()
                cands[0] = initial_hyper
                state.last_ys[0] = space.to_unit(initial_hyper)
                try:
                    baseline = run_pipeline(settings, initial_hyper,
                                            _eval_seed(master_seed, 0),
                                            design_overrides=design)
                    baseline_fit = -baseline.volume
                    if warm_start:
                        seed_traj = baseline.traj
                except (NumericalBlowup, GoalUnstabilizable, CholeskyFailure,
                        InfeasibleBounds, np.linalg.LinAlgError, ValueError):
                    baseline_fit = np.inf
                rest = _evaluate_batch(pool, settings, cands[1:], master_seed, 1,
                                       design, seed_traj)
                fits = np.array([baseline_fit, *rest])
            else:
                fits = np.asarray(_evaluate_batch(pool, settings, cands, master_seed,
                                                  n_evals, design, seed_traj))
            for i, (c, f) in enumerate(zip(cands, fits)):
                eval_log.append((n_evals + i, *c, f))
            n_evals += state.lam
            if state.generation == 0 and np.all(np.isinf(fits)):
                raise AllCandidatesFailed("entire first generation failed")
            tell(state, cands, np.where(np.isfinite(fits), fits, np.inf))
            i = int(np.argmin(fits))
            if fits[i] < best_fit:
                best_fit, best_hyper = float(fits[i]), np.asarray(cands[i]).copy()
    finally:
        if pool is not None:
            pool.shutdown()

    best_pipeline, final_volume = None, None
    if np.isfinite(best_fit):
        best_pipeline = run_pipeline(settings, best_hyper, _eval_seed(master_seed, 0),
                                     design_overrides=design, seed_traj=seed_traj)
        if final_funnel_budget is not None:
            best_pipeline = run_pipeline(settings, best_hyper, _eval_seed(master_seed, 1),
                                         design_overrides=design, seed_traj=seed_traj,
                                         funnel_budget=final_funnel_budget)
            final_volume = best_pipeline.volume
    best_volume = -best_fit if np.isfinite(best_fit) else np.nan
    baseline_volume = -baseline_fit if np.isfinite(baseline_fit) else np.nan
    return CodesignResult(
        system=settings.system,
        best_hyper=best_hyper,
        best_design=dict(design) if design else None,
        best_volume=best_volume,
        baseline_volume=baseline_volume,
        volume_ratio=best_volume / baseline_volume if baseline_volume else np.nan,
        final_volume=final_volume,
        pipeline=best_pipeline,
        eval_log=eval_log,
        n_evaluations=n_evals,
    )


def rtcd_optimize(settings: PipelineSettings, hyper_space: SearchSpace,
                  initial_hyper, design_space: SearchSpace, initial_design: dict,
                  budget_outer: int, budget_inner: int, master_seed: int,
                  workers: int = 1,
                  final_funnel_budget: int | None = None) -> CodesignResult:
    """Outer-layer search over design parameters with RTC as the evaluator.

    Each outer fitness is the negated best volume of a full inner run at
    the candidate design; the initial design is evaluated first with the
    same inner seed an equivalent standalone RTC run would use, so the
    outer best can only improve on it.
    """
    names = design_space.names
    initial_vec = np.array([initial_design[n] for n in names], dtype=float)

    inner_results = {}

    def eval_design(vec, outer_index):
        design = {n: float(v) for n, v in zip(names, vec)}
        inner_seed = int(np.random.SeedSequence(
            master_seed, spawn_key=(outer_index,)).generate_state(1)[0])
        res = rtc_optimize(settings, hyper_space, initial_hyper, budget_inner,
                           inner_seed, workers=workers, design=design)
        inner_results[outer_index] = res
        return -res.best_volume if np.isfinite(res.best_volume) else np.inf

    eval_log = []
    fit0 = eval_design(initial_vec, 0)
    eval_log.append((0, *initial_vec, fit0))
    best_fit, best_index, best_vec = fit0, 0, initial_vec.copy()
    n_outer = 1

    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(2**31, 1)))
    state = CmaesState.init(design_space, x0=initial_vec)
    while n_outer + state.lam <= budget_outer:
        cands = ask(state, rng)
        fits = []
        for i, c in enumerate(cands):
            f = eval_design(np.asarray(c, dtype=float), n_outer + i)
            eval_log.append((n_outer + i, *c, f))
            fits.append(f)
        fits = np.asarray(fits)
        if state.generation == 0 and np.all(np.isinf(fits)) and np.isinf(fit0):
            raise AllCandidatesFailed("entire first outer generation failed")
        tell(state, cands, fits)
        i = int(np.argmin(fits))
        if fits[i] < best_fit:
            best_fit = float(fits[i])
            best_index = n_outer + i
            best_vec = np.asarray(cands[i]).copy()
        n_outer += state.lam

    best_inner = inner_results[best_index]
    best_pipeline = best_inner.pipeline
    final_volume = None
    if final_funnel_budget is not None and np.isfinite(best_inner.best_volume):
        design = {n: float(v) for n, v in zip(names, best_vec)}
        inner_seed = int(np.random.SeedSequence(
            master_seed, spawn_key=(best_index,)).generate_state(1)[0])
        best_pipeline = run_pipeline(settings, best_inner.best_hyper,
                                     _eval_seed(inner_seed, 1),
                                     design_overrides=design,
                                     funnel_budget=final_funnel_budget)
        final_volume = best_pipeline.volume
    return CodesignResult(
        system=settings.system,
        best_hyper=best_inner.best_hyper,
        best_design={n: float(v) for n, v in zip(names, best_vec)},
        best_volume=best_inner.best_volume,
        baseline_volume=inner_results[0].baseline_volume,
        volume_ratio=(best_inner.best_volume / inner_results[0].baseline_volume
                      if inner_results[0].baseline_volume else np.nan),
        final_volume=final_volume,
        pipeline=best_pipeline,
        eval_log=eval_log,
        n_evaluations=sum(r.n_evaluations for r in inner_results.values()),
    )
