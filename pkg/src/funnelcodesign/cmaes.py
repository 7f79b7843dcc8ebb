"""Covariance-matrix-adaptation evolution strategy with box constraints.

The strategy searches an unconstrained internal space; candidates are
folded into the unit box by reflection and then mapped to the external
(possibly log-scaled) variable ranges. All distribution updates follow
the standard CMA-ES equations with default weights and learning rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllCandidatesFailed


@dataclass
class SearchSpace:
    """Named, bounded decision variables with linear or log scaling."""

    names: list
    lower: np.ndarray
    upper: np.ndarray
    scales: list = None   # "linear" | "log" per variable

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.scales is None:
            self.scales = ["linear"] * len(self.names)
        if np.any(self.lower > self.upper):
            raise ValueError("need lower <= upper for every variable")
        for lo, sc in zip(self.lower, self.scales):
            if sc == "log" and lo <= 0:
                raise ValueError("log-scaled variables need positive lower bounds")
            if sc not in ("linear", "log"):
                raise ValueError(f"unknown scale '{sc}'")

    @property
    def dim(self):
        return len(self.names)

    def from_unit(self, v):
        """Map unit-box coordinates to external values."""
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        for i, sc in enumerate(self.scales):
            if self.lower[i] == self.upper[i]:
                out[..., i] = self.lower[i]
            elif sc == "log":
                out[..., i] = np.exp(
                    math.log(self.lower[i])
                    + v[..., i] * (math.log(self.upper[i]) - math.log(self.lower[i]))
                )
            else:
                out[..., i] = self.lower[i] + v[..., i] * (self.upper[i] - self.lower[i])
        return out

    def to_unit(self, x):
        """Inverse of from_unit for in-bounds points."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i, sc in enumerate(self.scales):
            if self.lower[i] == self.upper[i]:
                out[..., i] = 0.5
            elif sc == "log":
                out[..., i] = (np.log(x[..., i]) - math.log(self.lower[i])) / (
                    math.log(self.upper[i]) - math.log(self.lower[i]))
            else:
                out[..., i] = (x[..., i] - self.lower[i]) / (self.upper[i] - self.lower[i])
        return out

    def contains(self, x):
        return bool(np.all(x >= self.lower - 1e-12) and np.all(x <= self.upper + 1e-12))


def reflect_to_unit(y):
    """Fold arbitrary reals into [0, 1] by reflection at the box faces."""
    r = np.mod(np.asarray(y, dtype=float), 2.0)
    return np.where(r <= 1.0, r, 2.0 - r)


def default_population_size(dim):
    return 4 + int(3 * math.log(dim))


@dataclass
class CmaesState:
    """Search distribution and evolution paths of one CMA-ES run."""

    space: SearchSpace
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float
    last_ys: np.ndarray | None = None

    @classmethod
    def init(cls, space: SearchSpace, x0=None, sigma0: float = 0.3, lam: int | None = None):
        d = space.dim
        lam = lam or default_population_size(d)
        mu = lam // 2
        raw = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        weights = raw / raw.sum()
        mu_eff = 1.0 / np.sum(weights**2)
        c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0)
        d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (d + 1.0)) - 1.0) + c_sigma
        c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d)
        c_1 = 2.0 / ((d + 1.3) ** 2 + mu_eff)
        c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0) ** 2 + mu_eff))
        chi_n = math.sqrt(d) * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d**2))
        mean = space.to_unit(np.asarray(x0, dtype=float)) if x0 is not None else np.full(d, 0.5)
        return cls(
            space=space, mean=mean, sigma=float(sigma0), C=np.eye(d),
            p_sigma=np.zeros(d), p_c=np.zeros(d), generation=0, lam=lam, mu=mu,
            weights=weights, mu_eff=mu_eff, c_sigma=c_sigma, d_sigma=d_sigma,
            c_c=c_c, c_1=c_1, c_mu=c_mu, chi_n=chi_n,
        )

    def clone(self):
        return CmaesState(
            space=self.space, mean=self.mean.copy(), sigma=self.sigma, C=self.C.copy(),
            p_sigma=self.p_sigma.copy(), p_c=self.p_c.copy(), generation=self.generation,
            lam=self.lam, mu=self.mu, weights=self.weights.copy(), mu_eff=self.mu_eff,
            c_sigma=self.c_sigma, d_sigma=self.d_sigma, c_c=self.c_c, c_1=self.c_1,
            c_mu=self.c_mu, chi_n=self.chi_n,
            last_ys=None if self.last_ys is None else self.last_ys.copy(),
        )


def _sqrt_decomposition(C):
    w, B = np.linalg.eigh(0.5 * (C + C.T))
    w = np.maximum(w, 1e-20)
    D = np.sqrt(w)
    return B, D


def ask(state: CmaesState, rng) -> np.ndarray:
    """Sample lambda candidates in external coordinates."""
    B, D = _sqrt_decomposition(state.C)
    z = rng.standard_normal((state.lam, state.space.dim))
    ys = state.mean + state.sigma * (z * D) @ B.T
    state.last_ys = ys
    return state.space.from_unit(reflect_to_unit(ys))


def tell(state: CmaesState, candidates, fitnesses) -> CmaesState:
    """Rank-based recombination and covariance/step-size update."""
    fitnesses = np.asarray(fitnesses, dtype=float)
    if np.all(np.isinf(fitnesses)):
        raise AllCandidatesFailed("every candidate evaluated to +inf")
    if state.last_ys is None or len(fitnesses) != state.lam:
        raise ValueError("tell must follow an ask of the same population")
    order = np.argsort(fitnesses, kind="stable")
    ys = state.last_ys[order[:state.mu]]

    d = state.space.dim
    old_mean = state.mean
    new_mean = state.weights @ ys
    y_w = (new_mean - old_mean) / state.sigma

    B, D = _sqrt_decomposition(state.C)
    C_inv_sqrt = (B / D) @ B.T
    state.p_sigma = (1.0 - state.c_sigma) * state.p_sigma + math.sqrt(
        state.c_sigma * (2.0 - state.c_sigma) * state.mu_eff) * (C_inv_sqrt @ y_w)
    gen = state.generation + 1
    ps_norm = np.linalg.norm(state.p_sigma)
    h_sigma = ps_norm / math.sqrt(
        1.0 - (1.0 - state.c_sigma) ** (2.0 * gen)) / state.chi_n < 1.4 + 2.0 / (d + 1.0)
    state.p_c = (1.0 - state.c_c) * state.p_c + h_sigma * math.sqrt(
        state.c_c * (2.0 - state.c_c) * state.mu_eff) * y_w

    artmp = (ys - old_mean) / state.sigma
    delta_h = (1.0 - h_sigma) * state.c_c * (2.0 - state.c_c)
    state.C = (
        (1.0 - state.c_1 - state.c_mu) * state.C
        + state.c_1 * (np.outer(state.p_c, state.p_c) + delta_h * state.C)
        + state.c_mu * (artmp.T * state.weights) @ artmp
    )
    state.C = 0.5 * (state.C + state.C.T)
    w, V = np.linalg.eigh(state.C)
    if w.min() <= 0:
        state.C = (V * np.maximum(w, 1e-14)) @ V.T

    state.sigma *= math.exp((state.c_sigma / state.d_sigma) * (ps_norm / state.chi_n - 1.0))
    # box handling: the external mapping is invariant under the reflection
    # fold, so the mean can be folded back without changing the search
    # distribution's image; capping sigma at the box width keeps the
    # folded landscape locally faithful
    state.sigma = min(state.sigma, 1.0)
    state.mean = reflect_to_unit(new_mean)
    state.generation = gen
    state.last_ys = None
    return state


def run_cmaes(objective, space: SearchSpace, budget: int, rng, x0=None,
              sigma0: float = 0.3, lam: int | None = None, callback=None):
    """Minimize ``objective`` over the search space with a fixed evaluation budget.

    ``objective`` maps a batch (lam, dim) of candidates to fitnesses (list
    of floats, +inf for failures). Returns (best_x, best_f, history) with
    history rows (generation, best_f_so_far, mean_external, sigma).
    """
    state = CmaesState.init(space, x0=x0, sigma0=sigma0, lam=lam)
    best_x, best_f = None, np.inf
    history = []
    evals = 0
    while evals + state.lam <= budget:
        cands = ask(state, rng)
        fits = np.asarray(objective(cands), dtype=float)
        evals += state.lam
        tell(state, cands, fits)
        i = int(np.argmin(fits))
        if fits[i] < best_f:
            best_f, best_x = float(fits[i]), cands[i].copy()
        history.append((state.generation, best_f,
                        state.space.from_unit(reflect_to_unit(state.mean)).copy(),
                        state.sigma))
        if callback is not None:
            callback(state, cands, fits, best_x, best_f)
    return best_x, best_f, history
