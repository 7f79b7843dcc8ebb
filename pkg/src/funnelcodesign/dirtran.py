"""Direct transcription of the swing-up problem and its NLP solver.

The swing-up optimal control problem is discretized at N knot points with
one RK4 step per interval as the discrete dynamics, giving equality
defect constraints and box bounds on all decision variables. The
resulting NLP is solved with an augmented-Lagrangian outer loop around a
bound-constrained quasi-Newton inner minimizer (scipy L-BFGS-B), with
analytic gradients chained through the RK4 stages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import rk4_step, rk4_step_jacobians
from .errors import InfeasibleBounds


@dataclass
class TrajOptSetup:
    """Knot grid, boundary states, bounds and cost weights of one solve."""

    N: int
    t_f: float
    x0: np.ndarray
    x_goal: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    Q: np.ndarray        # running state cost, diagonal entries
    R: np.ndarray        # running input cost, diagonal entries
    Qf: np.ndarray       # final state cost, diagonal entries

    def __post_init__(self):
        for name in ("x0", "x_goal", "x_min", "x_max", "u_min", "u_max", "Q", "R", "Qf"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.N < 2:
            raise ValueError("need at least two knot points")
        if self.t_f <= 0:
            raise ValueError("horizon t_f must be positive")
        if np.any(self.x_min > self.x_max) or np.any(self.u_min > self.u_max):
            raise ValueError("lower bounds exceed upper bounds")
        if np.any(self.Q < 0) or np.any(self.Qf < 0):
            raise ValueError("state cost diagonals must be non-negative")
        if np.any(self.R <= 0):
            raise ValueError("input cost diagonal must be strictly positive")

    @property
    def dt(self):
        return self.t_f / (self.N - 1)


@dataclass
class NominalTrajectory:
    """Knot-point arrays of the open-loop solution."""

    t: np.ndarray        # (N,)
    x: np.ndarray        # (N, nx)
    u: np.ndarray        # (N, nu)
    defect_norm: float = np.nan

    @property
    def N(self):
        return len(self.t)

    @property
    def dt(self):
        return self.t[1] - self.t[0]

    def to_csv(self, path):
        nx, nu = self.x.shape[1], self.u.shape[1]
        header = ["time"] + [f"x_{i}" for i in range(nx)] + [f"u_{i}" for i in range(nu)]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for k in range(self.N):
                w.writerow([f"{v:.17g}" for v in (self.t[k], *self.x[k], *self.u[k])])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        nx = sum(1 for h in header if h.startswith("x_"))
        nu = sum(1 for h in header if h.startswith("u_"))
        return cls(t=data[:, 0], x=data[:, 1:1 + nx], u=data[:, 1 + nx:1 + nx + nu])


@dataclass
class SolveReport:
    converged: bool
    outer_iterations: int
    n_evaluations: int
    defect_norm: float
    boundary_error: float
    objective: float
    merit_history: list = field(default_factory=list)  # (before, after) per outer iter


class NlpProblem:
    """The transcribed NLP: packed decision vector, objective, constraints.

    Decision vector z = [x[0], ..., x[N-1], u[0], ..., u[N-1]] flattened.
    Equality constraints: RK4 defects x[k+1] - f_d(x[k], u[k]) for
    k = 0..N-2, then x[0] - x0 and x[N-1] - x_goal. The boundary states
    are additionally pinned through the box bounds, so they hold exactly
    at every iterate.
    """

    def __init__(self, setup: TrajOptSetup, model):
        if np.any(setup.x0 < setup.x_min) or np.any(setup.x0 > setup.x_max):
            raise InfeasibleBounds("start state outside state bounds")
        if np.any(setup.x_goal < setup.x_min) or np.any(setup.x_goal > setup.x_max):
            raise InfeasibleBounds("goal state outside state bounds")
        self.setup = setup
        self.model = model
        self.nx = model.nx
        self.nu = model.nu
        self.n_states = setup.N * self.nx
        self.n_vars = setup.N * (self.nx + self.nu)
        self.n_defects = (setup.N - 1) * self.nx
        self.n_constraints = self.n_defects + 2 * self.nx

        lb_x = np.tile(setup.x_min, (setup.N, 1))
        ub_x = np.tile(setup.x_max, (setup.N, 1))
        lb_x[0] = ub_x[0] = setup.x0
        lb_x[-1] = ub_x[-1] = setup.x_goal
        lb_u = np.tile(setup.u_min, (setup.N, 1))
        ub_u = np.tile(setup.u_max, (setup.N, 1))
        self.lower = np.concatenate([lb_x.ravel(), lb_u.ravel()])
        self.upper = np.concatenate([ub_x.ravel(), ub_u.ravel()])

    def split(self, z):
        x = z[:self.n_states].reshape(self.setup.N, self.nx)
        u = z[self.n_states:].reshape(self.setup.N, self.nu)
        return x, u

    def pack(self, x, u):
        return np.concatenate([np.ravel(x), np.ravel(u)])

    def initial_guess(self, seed: NominalTrajectory | None = None):
        if seed is not None:
            return self.pack(seed.x, seed.u)
        alphas = np.linspace(0.0, 1.0, self.setup.N)[:, None]
        x = (1.0 - alphas) * self.setup.x0 + alphas * self.setup.x_goal
        u = np.zeros((self.setup.N, self.nu))
        return self.pack(x, u)

    def objective(self, z):
        x, u = self.split(z)
        dx = x - self.setup.x_goal
        run = np.sum(dx**2 @ self.setup.Q) + np.sum(u**2 @ self.setup.R)
        fin = float(dx[-1] @ (self.setup.Qf * dx[-1]))
        return run + fin

    def objective_gradient(self, z):
        x, u = self.split(z)
        dx = x - self.setup.x_goal
        gx = 2.0 * dx * self.setup.Q
        gx[-1] += 2.0 * self.setup.Qf * dx[-1]
        gu = 2.0 * u * self.setup.R
        return self.pack(gx, gu)

    def constraints(self, z):
        x, u = self.split(z)
        pred = rk4_step(self.model, x[:-1], u[:-1], self.setup.dt)
        defects = (x[1:] - pred).ravel()
        bc = np.concatenate([x[0] - self.setup.x0, x[-1] - self.setup.x_goal])
        return np.concatenate([defects, bc])

    def constraint_jac_t_vec(self, z, w):
        """J(z)^T w without forming J; w has length n_constraints."""
        x, u = self.split(z)
        Phi_x, Phi_u = rk4_step_jacobians(self.model, x[:-1], u[:-1], self.setup.dt)
        wd = w[:self.n_defects].reshape(self.setup.N - 1, self.nx)
        gx = np.zeros_like(x)
        gu = np.zeros_like(u)
        gx[1:] += wd
        gx[:-1] -= np.einsum("kij,ki->kj", Phi_x, wd)
        gu[:-1] -= np.einsum("kij,ki->kj", Phi_u, wd)
        gx[0] += w[self.n_defects:self.n_defects + self.nx]
        gx[-1] += w[self.n_defects + self.nx:]
        return self.pack(gx, gu)


@dataclass
class SolverOptions:
    tol_constraint: float = 1e-6
    tol_gradient: float = 1e-4      # relative to max(1, ||grad f||_inf)
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e6
    max_outer: int = 30
    max_inner: int = 2000
    polish_iters: int = 3           # Gauss-Newton feasibility refinement steps


def _polish_feasibility(problem: NlpProblem, z, iters):
    """Minimum-norm Gauss-Newton steps driving the defects toward zero.

    The quasi-Newton inner solver bottoms out around 1e-9 constraint
    violation; resimulating the open-loop solution amplifies per-knot
    defects through the unstable swing-up dynamics, so the last digits
    matter. Pinned variables (equal bounds) are excluded from the step.
    """
    N, nx, nu = problem.setup.N, problem.nx, problem.nu
    for _ in range(iters):
        # exclude pinned variables and actively-bounded ones (saturated
        # inputs), otherwise the step is clipped away at the box faces
        free = ((problem.upper > problem.lower)
                & (z > problem.lower + 1e-9) & (z < problem.upper - 1e-9))
        c = problem.constraints(z)
        if np.max(np.abs(c)) < 1e-13:
            break
        x, u = problem.split(z)
        Phi_x, Phi_u = rk4_step_jacobians(problem.model, x[:-1], u[:-1],
                                          problem.setup.dt)
        jac = np.zeros((problem.n_constraints, problem.n_vars))
        for k in range(N - 1):
            rows = slice(k * nx, (k + 1) * nx)
            jac[rows, (k + 1) * nx:(k + 2) * nx] = np.eye(nx)
            jac[rows, k * nx:(k + 1) * nx] = -Phi_x[k]
            jac[rows, problem.n_states + k * nu:
                problem.n_states + (k + 1) * nu] = -Phi_u[k]
        jac[problem.n_defects:problem.n_defects + nx, :nx] = np.eye(nx)
        jac[problem.n_defects + nx:, (N - 1) * nx:N * nx] = np.eye(nx)
        # zero rows (pinned-only) make this rank deficient; minimum-norm
        # least squares handles that
        step = np.zeros_like(z)
        step[free] = np.linalg.lstsq(jac[:, free], -c, rcond=None)[0]
        z = np.clip(z + step, problem.lower, problem.upper)
    return z


def solve_nlp(problem: NlpProblem, opts: SolverOptions | None = None,
              seed: NominalTrajectory | None = None):
    """Augmented-Lagrangian solve of the transcribed NLP.

    Returns (NominalTrajectory, SolveReport); on non-convergence the best
    iterate is returned with ``report.converged`` False.
    """
    opts = opts or SolverOptions()
    z = np.clip(problem.initial_guess(seed), problem.lower, problem.upper)
    lam = np.zeros(problem.n_constraints)
    rho = opts.penalty_init
    bounds = list(zip(problem.lower, problem.upper))
    n_evals = 0
    merit_history = []
    converged = False
    prev_viol = np.inf

    def aug_lagrangian(z):
        nonlocal n_evals
        n_evals += 1
        c = problem.constraints(z)
        val = problem.objective(z) + lam @ c + 0.5 * rho * (c @ c)
        grad = problem.objective_gradient(z) + problem.constraint_jac_t_vec(z, lam + rho * c)
        return val, grad

    for outer in range(opts.max_outer):
        before = aug_lagrangian(z)[0]
        res = minimize(aug_lagrangian, z, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_inner, "maxfun": 10 * opts.max_inner,
                                "ftol": 1e-18, "gtol": 1e-7})
        z = np.clip(res.x, problem.lower, problem.upper)
        after = aug_lagrangian(z)[0]
        merit_history.append((before, after))

        c = problem.constraints(z)
        viol = np.max(np.abs(c)) if len(c) else 0.0
        lam_new = lam + rho * c
        g_lag = problem.objective_gradient(z) + problem.constraint_jac_t_vec(z, lam_new)
        pg = z - np.clip(z - g_lag, problem.lower, problem.upper)
        pg_norm = np.max(np.abs(pg))
        g_scale = max(1.0, np.max(np.abs(problem.objective_gradient(z))))
        if viol <= opts.tol_constraint and pg_norm <= opts.tol_gradient * g_scale:
            converged = True
            break
        lam = lam_new
        # keep the subproblem conditioned: stop growing rho once feasible
        if viol > 0.25 * prev_viol and viol > opts.tol_constraint and rho < opts.penalty_max:
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
        prev_viol = viol

    if converged:
        z = _polish_feasibility(problem, z, opts.polish_iters)

    x, u = problem.split(z)
    defects = np.abs(problem.constraints(z)[:problem.n_defects])
    defect_norm = float(np.max(defects)) if len(defects) else 0.0
    bc_err = max(float(np.max(np.abs(x[0] - problem.setup.x0))),
                 float(np.max(np.abs(x[-1] - problem.setup.x_goal))))
    traj = NominalTrajectory(
        t=np.linspace(0.0, problem.setup.t_f, problem.setup.N),
        x=x, u=u, defect_norm=defect_norm,
    )
    report = SolveReport(
        converged=converged,
        outer_iterations=outer + 1,
        n_evaluations=n_evals,
        defect_norm=defect_norm,
        boundary_error=bc_err,
        objective=problem.objective(z),
        merit_history=merit_history,
    )
    return traj, report


def transcribe(setup: TrajOptSetup, model) -> NlpProblem:
    """Build the NLP for one swing-up problem."""
    return NlpProblem(setup, model)
