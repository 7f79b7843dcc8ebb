"""Simulation-and-falsification estimation of the time-varying ROA.

A funnel assigns each knot point a sublevel value rho[k] of the TVLQR
cost-to-go V_k(e) = e^T S[k] e. Estimation samples states on the current
region boundaries, simulates the saturated closed loop to the final time
and, on failure, shrinks a single region via the min rule
rho_new = min(V, rho_old). Verification samples the interior with a
fresh seed and never mutates the funnel.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, solve_continuous_are, solve_triangular

from .errors import CholeskyFailure, DegenerateSchedule, GoalUnstabilizable
from .rollout import rollout_hold, substeps_per_interval, tracking_rollout
from .tvlqr import error_coords, quad_value

RHO_FLOOR = 1e-9


@dataclass
class GoalRegion:
    """Time-invariant stabilizable region around the goal state."""

    rho: float
    S: np.ndarray
    center: np.ndarray

    def contains(self, x, angle_indices):
        e = error_coords(x, self.center, angle_indices)
        return quad_value(self.S, e) < self.rho


@dataclass
class Funnel:
    """Per-knot sublevel values paired with the gain schedule's S matrices."""

    rho: np.ndarray          # (N,)
    traj: object             # NominalTrajectory (region centers)
    sched: object            # GainSchedule (provides S)

    @property
    def N(self):
        return len(self.rho)

    def to_json(self, path):
        payload = {
            "times": self.traj.t.tolist(),
            "rho": self.rho.tolist(),
            "S": [Sk.ravel().tolist() for Sk in self.sched.S],
        }
        with open(path, "w") as f:
            json.dump(payload, f)

    def projection_to_csv(self, path, dims=None, n_points: int = 64):
        """Ellipse point sets of the funnel projected onto two state dims."""
        if dims is None:
            dims = (0, 1)
        i, j = dims
        with open(path, "w") as f:
            f.write("knot,time,point,%s\n" % ",".join([f"dim_{i}", f"dim_{j}"]))
            phis = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
            for k in range(self.N):
                cov = np.linalg.inv(self.sched.S[k])[np.ix_([i, j], [i, j])]
                w, V = np.linalg.eigh(cov)
                half = V @ np.diag(np.sqrt(np.maximum(w, 0.0)))
                center = self.traj.x[k][[i, j]]
                for p, phi in enumerate(phis):
                    y = center + math.sqrt(self.rho[k]) * (half @ [math.cos(phi), math.sin(phi)])
                    f.write(f"{k},{self.traj.t[k]:.17g},{p},{y[0]:.17g},{y[1]:.17g}\n")

    @classmethod
    def from_json(cls, path, traj, sched):
        with open(path) as f:
            payload = json.load(f)
        return cls(rho=np.array(payload["rho"]), traj=traj, sched=sched)


@dataclass
class EstimationReport:
    n_simulations: int = 0
    falsifications: np.ndarray | None = None   # per knot
    backoff_shrinks: int = 0
    floored_knots: list = field(default_factory=list)
    rho: np.ndarray | None = None
    wall_time: float = 0.0


def sample_on_level_set(S, rho, center, rng):
    """Uniform sample on the boundary {x : (x-center)^T S (x-center) = rho}."""
    S = np.asarray(S, dtype=float)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("level-set matrix is not positive definite") from exc
    z = rng.standard_normal(len(S))
    z /= np.linalg.norm(z)
    y = solve_triangular(L.T, z, lower=False)
    return np.asarray(center, dtype=float) + math.sqrt(rho) * y


def _boundary_from_gaussian(L, rho, center, z, radius_factor=1.0):
    """Map a pre-drawn standard normal to the (scaled) level set of LL^T."""
    z = z / np.linalg.norm(z)
    y = solve_triangular(L.T, z, lower=False)
    return center + radius_factor * math.sqrt(rho) * y


def _knot_values(model, traj, sched, states, k0):
    """V_i(e_i) for the rollout's states at knots k0..N-1."""
    N = traj.N
    vals = np.empty(N)
    vals[:k0] = np.nan
    for i in range(k0, N):
        e = error_coords(states[i], traj.x[i], model.angle_indices)
        vals[i] = quad_value(sched.S[i], e)
    return vals


def estimate_funnel(traj, sched, goal: GoalRegion, model, budget: int, rng,
                    rho_init: float = 1.0, substeps: int = 10,
                    backoff: float = 0.5) -> tuple[Funnel, EstimationReport]:
    """Shrink-only falsification of an initial funnel hypothesis.

    ``budget`` is the number of boundary samples per knot. Knots are
    processed in backward round-robin order, one sample per knot per
    round; samples of a round are drawn up front and scaled with the
    rho values frozen at round start, so shrink application between
    rounds is the only serial coupling and worker count cannot change
    the result.

    On a failing rollout the single updated region is the first
    downstream knot the failing trajectory visits strictly inside the
    current funnel (min rule there is a strict shrink). A failing
    rollout that never re-enters falsifies no interior claim; the
    sampled region is then backed off geometrically so estimation still
    makes progress.
    """
    t_start = time.perf_counter()
    N = traj.N
    rho = np.full(N, float(rho_init))
    # largest sublevel set of the schedule's final metric contained in the
    # goal region: {e S[N-1] e < rho_end} subset of {e S_goal e < goal.rho}
    lam_max = eigh(goal.S, sched.S[N - 1], eigvals_only=True)[-1]
    rho[N - 1] = min(float(rho_init), goal.rho / lam_max)
    try:
        chols = [np.linalg.cholesky(sched.S[k]) for k in range(N)]
    except np.linalg.LinAlgError as exc:
        raise DegenerateSchedule("gain schedule has a non-PD cost-to-go matrix") from exc

    sub = substeps_per_interval(model, traj, sched, base=substeps)
    report = EstimationReport(falsifications=np.zeros(N, dtype=int))
    knots = list(range(N - 2, -1, -1))
    for _ in range(budget):
        zs = rng.standard_normal((len(knots), model.nx))
        rho_round = rho.copy()
        rollouts = {}
        for idx, k in enumerate(knots):
            x0 = _boundary_from_gaussian(chols[k], rho_round[k], traj.x[k], zs[idx])
            rollouts[k] = tracking_rollout(model, traj, sched, k, x0, sub)
            report.n_simulations += 1
        for k in knots:
            states = rollouts[k]
            if goal.contains(states[N - 1], model.angle_indices):
                continue
            vals = _knot_values(model, traj, sched, states, k)
            inside = [i for i in range(k + 1, N - 1) if vals[i] < rho[i]]
            if inside:
                j = inside[0]
                rho[j] = min(vals[j], rho[j])
                report.falsifications[j] += 1
            else:
                rho[k] = backoff * rho[k]
                report.backoff_shrinks += 1
            for j in np.nonzero(rho < RHO_FLOOR)[0]:
                rho[j] = RHO_FLOOR
                if j not in report.floored_knots:
                    report.floored_knots.append(int(j))

    report.rho = rho.copy()
    report.wall_time = time.perf_counter() - t_start
    return Funnel(rho=rho, traj=traj, sched=sched), report


def funnel_volume(funnel: Funnel) -> float:
    """Sum over knots of the ellipsoid volumes vol{e : e^T S e <= rho}."""
    d = funnel.sched.S.shape[1]
    c_d = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    total = 0.0
    for k in range(funnel.N):
        det = np.linalg.det(funnel.sched.S[k])
        total += c_d * funnel.rho[k] ** (d / 2.0) / math.sqrt(det)
    return total


@dataclass
class VerificationReport:
    n_samples: int
    successes: int
    per_knot_samples: np.ndarray
    per_knot_successes: np.ndarray

    @property
    def success_rate(self):
        return self.successes / self.n_samples if self.n_samples else 1.0

    def to_json(self, path):
        payload = {
            "n_samples": int(self.n_samples),
            "successes": int(self.successes),
            "success_rate": self.success_rate,
            "per_knot_samples": self.per_knot_samples.tolist(),
            "per_knot_successes": self.per_knot_successes.tolist(),
        }
        with open(path, "w") as f:
            json.dump(payload, f)


def verify_funnel(funnel: Funnel, traj, sched, goal: GoalRegion, model,
                  n_samples: int, rng, substeps: int = 10) -> VerificationReport:
    """Monte-Carlo check of the certificate with interior samples.

    Distributes ``n_samples`` round-robin over the knots, samples
    uniformly inside each region (boundary direction scaled by U^(1/d))
    and simulates the closed loop; never mutates the funnel.
    """
    N = traj.N
    d = model.nx
    chols = [np.linalg.cholesky(sched.S[k]) for k in range(N)]
    sub = substeps_per_interval(model, traj, sched, base=substeps)
    per_samples = np.zeros(N, dtype=int)
    per_success = np.zeros(N, dtype=int)
    knots = list(range(N - 1))
    count = 0
    while count < n_samples:
        for k in knots:
            if count >= n_samples:
                break
            z = rng.standard_normal(d)
            radius = rng.uniform() ** (1.0 / d)
            x0 = _boundary_from_gaussian(chols[k], funnel.rho[k], traj.x[k], z,
                                         radius_factor=radius)
            states = tracking_rollout(model, traj, sched, k, x0, sub)
            per_samples[k] += 1
            count += 1
            if goal.contains(states[N - 1], model.angle_indices):
                per_success[k] += 1
    return VerificationReport(
        n_samples=count,
        successes=int(per_success.sum()),
        per_knot_samples=per_samples,
        per_knot_successes=per_success,
    )


def goal_region_from_samples(sched, traj, model, rng, costs, rho_init: float = 1.0,
                             t_hold: float = 2.0, budget: int = 100,
                             substeps: int = 10, backoff: float = 0.5,
                             converge_tol: float = 1e-2) -> GoalRegion:
    """Falsify a stabilizable region around the goal under a constant gain.

    The hold controller is the stationary LQR at the goal state computed
    from the same controller costs (the limit of the time-varying gain
    away from the terminal boundary layer; the boundary-layer gain
    K[N-1] itself only feeds back velocities and need not stabilize).
    Boundary samples of the current region are held for ``t_hold``
    seconds; success means staying inside the initial sublevel set and
    converging to the goal. Failures shrink via the min of V along the
    rollout, with a geometric backoff when the rollout leaves
    immediately.
    """
    center = traj.x[-1]
    u_ref = float(traj.u[-1, 0])
    A, B = model.linearize(center, traj.u[-1])
    S = solve_continuous_are(A, B, np.diag(costs.Q), np.diag(costs.R))
    S = 0.5 * (S + S.T)
    K_hold = np.linalg.solve(np.diag(costs.R), B.T @ S)
    K = K_hold[0]
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("stationary cost-to-go matrix is not positive definite") from exc

    # step size limited by the closed-loop stiffness of the hold gain
    rate = float(np.max(np.abs(np.linalg.eigvals(A - B @ K_hold))))
    dt = min(traj.dt / substeps, 1.0 / max(rate, 1e-9))
    n_steps = max(1, int(round(t_hold / dt)))
    rho = float(rho_init)
    for _ in range(budget):
        z = rng.standard_normal(model.nx)
        x0 = _boundary_from_gaussian(L, rho, center, z)
        states = rollout_hold(
            model.system_id, model.params_vector(),
            np.ascontiguousarray(center, dtype=float), u_ref,
            np.ascontiguousarray(K, dtype=float),
            np.ascontiguousarray(x0, dtype=float),
            dt, n_steps, float(model.params.u_max), int(model.angle_indices[0]),
        )
        errs = error_coords(states, center, model.angle_indices)
        vals = quad_value(S, errs)
        ok = bool(np.all(vals[1:] < rho_init) and np.linalg.norm(errs[-1]) < converge_tol)
        if not ok:
            rho = min(float(np.min(vals)), backoff * rho)
            if rho < RHO_FLOOR:
                raise GoalUnstabilizable("goal region collapsed below the positivity floor")
    return GoalRegion(rho=rho, S=S.copy(), center=center.copy())
