"""Declarative run configuration: YAML parsing, validation, defaults.

A run is described by one nested YAML document. Unknown keys are
rejected and every module precondition that can be checked statically is
checked at parse time, so a config that parses will not fail on trivia
halfway through a long optimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .errors import ConfigError

_SYSTEMS = ("pendulum", "cartpole")
_STATE_DIM = {"pendulum": 2, "cartpole": 4}
_MODEL_KEYS = {
    "pendulum": ("m", "l", "b", "g", "u_max"),
    "cartpole": ("m", "l", "M_c", "b", "g", "u_max"),
}
_HYPER_NAMES = ("Q11", "Q22", "R11")


@dataclass
class VariableSpec:
    """One search variable: bounds, scaling and initial value."""

    lower: float
    upper: float
    scale: str = "linear"     # linear | log
    init: float = 0.0

    def validate(self, name):
        if self.scale not in ("linear", "log"):
            raise ConfigError(f"{name}.scale must be 'linear' or 'log', got {self.scale!r}")
        if not (self.lower < self.upper):
            raise ConfigError(f"{name}: lower bound {self.lower} must be < upper {self.upper}")
        if self.scale == "log" and self.lower <= 0:
            raise ConfigError(f"{name}: log-scaled bounds must be positive")
        if not (self.lower <= self.init <= self.upper):
            raise ConfigError(f"{name}: initial value {self.init} outside "
                              f"[{self.lower}, {self.upper}]")


@dataclass
class TrajectoryConfig:
    N: int
    t_f: float
    x0: list
    x_goal: list
    x_min: list
    x_max: list


@dataclass
class CostConfig:
    Q: list
    R: list
    qf_scale: float = 100.0


@dataclass
class FunnelConfig:
    budget: int = 100
    rho_init: float = 1.0
    substeps: int = 10
    verify_samples: int = 1000


@dataclass
class GoalConfig:
    rho_init: float = 1.0
    t_hold: float = 2.0
    budget: int = 100


@dataclass
class RtcConfig:
    budget: int = 200
    objective_budget: int = 30
    final_budget: int = 100
    variables: dict = field(default_factory=dict)   # name -> VariableSpec


@dataclass
class RtcdConfig:
    outer_budget: int = 20
    inner_budget: int = 60
    variables: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    system: str
    model: dict
    trajectory: TrajectoryConfig
    costs: CostConfig
    funnel: FunnelConfig
    goal: GoalConfig
    rtc: RtcConfig
    rtcd: RtcdConfig
    seed: int = 1
    workers: int = 3

    def to_dict(self):
        out = asdict(self)
        return out


def _require_mapping(node, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")


def _check_keys(node, allowed, path):
    unknown = set(node) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")


def _number(node, path, positive=False):
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    v = float(node)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{path}: must be positive, got {v}")
    return v


def _integer(node, path, minimum=None):
    if isinstance(node, bool) or not isinstance(node, int):
        raise ConfigError(f"{path}: expected an integer, got {node!r}")
    if minimum is not None and node < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {node}")
    return int(node)


def _vector(node, path, n):
    if not isinstance(node, (list, tuple)) or len(node) != n:
        raise ConfigError(f"{path}: expected a list of {n} numbers")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(node)]


def _variable(node, path, default: VariableSpec) -> VariableSpec:
    _require_mapping(node, path)
    _check_keys(node, ("min", "max", "scale", "init"), path)
    spec = VariableSpec(
        lower=_number(node["min"], f"{path}.min") if "min" in node else default.lower,
        upper=_number(node["max"], f"{path}.max") if "max" in node else default.upper,
        scale=node.get("scale", default.scale),
        init=_number(node["init"], f"{path}.init") if "init" in node else default.init,
    )
    spec.validate(path)
    return spec


def default_config(system: str) -> RunConfig:
    """Built-in defaults replicating the reference swing-up setups."""
    if system == "pendulum":
        return RunConfig(
            system="pendulum",
            model=dict(m=0.7, l=0.4, b=0.1, g=9.81, u_max=2.0),
            trajectory=TrajectoryConfig(
                N=51, t_f=3.0, x0=[0.0, 0.0], x_goal=[math.pi, 0.0],
                x_min=[-2 * math.pi, -20.0], x_max=[2 * math.pi, 20.0]),
            costs=CostConfig(Q=[10.0, 1.0], R=[0.1]),
            funnel=FunnelConfig(),
            goal=GoalConfig(),
            rtc=RtcConfig(variables={
                "Q11": VariableSpec(0.1, 100.0, "linear", 1.0),
                "Q22": VariableSpec(0.1, 100.0, "linear", 1.0),
                "R11": VariableSpec(0.01, 100.0, "log", 1.0),
            }),
            rtcd=RtcdConfig(variables={
                "m": VariableSpec(0.3, 1.0, "linear", 0.7),
                "l": VariableSpec(0.2, 0.6, "linear", 0.4),
            }),
        )
    if system == "cartpole":
        return RunConfig(
            system="cartpole",
            model=dict(m=0.23, l=0.18, M_c=0.57, b=0.005, g=9.81, u_max=8.0),
            trajectory=TrajectoryConfig(
                N=101, t_f=3.0, x0=[0.0, 0.0, 0.0, 0.0],
                x_goal=[0.0, math.pi, 0.0, 0.0],
                x_min=[-0.4, -2 * math.pi, -12.0, -15.0],
                x_max=[0.4, 2 * math.pi, 12.0, 15.0]),
            costs=CostConfig(Q=[10.0, 10.0, 1.0, 1.0], R=[1.0]),
            funnel=FunnelConfig(),
            goal=GoalConfig(),
            rtc=RtcConfig(budget=150, variables={
                "Q11": VariableSpec(0.1, 100.0, "linear", 10.0),
                "Q22": VariableSpec(0.1, 100.0, "linear", 10.0),
                "R11": VariableSpec(0.01, 100.0, "log", 10.0),
            }),
            rtcd=RtcdConfig(variables={
                "m": VariableSpec(0.1, 0.5, "linear", 0.23),
                "l": VariableSpec(0.1, 0.4, "linear", 0.18),
            }),
        )
    raise ConfigError(f"system must be one of {_SYSTEMS}, got {system!r}")


def parse_config(doc: dict) -> RunConfig:
    """Build a validated RunConfig from a parsed YAML document.

    Missing sections fall back to the per-system defaults; unknown keys
    anywhere are an error.
    """
    _require_mapping(doc, "config")
    _check_keys(doc, ("system", "seed", "workers", "model", "trajectory", "costs",
                      "funnel", "goal", "rtc", "rtcd"), "config")
    system = doc.get("system", "pendulum")
    if system not in _SYSTEMS:
        raise ConfigError(f"system must be one of {_SYSTEMS}, got {system!r}")
    cfg = default_config(system)
    nx = _STATE_DIM[system]

    cfg.seed = _integer(doc.get("seed", cfg.seed), "seed", minimum=0)
    cfg.workers = _integer(doc.get("workers", cfg.workers), "workers", minimum=1)

    if "model" in doc:
        node = doc["model"]
        _require_mapping(node, "model")
        _check_keys(node, _MODEL_KEYS[system], "model")
        for key in node:
            positive = key in ("m", "l", "M_c", "g")
            cfg.model[key] = _number(node[key], f"model.{key}", positive=positive)
        if cfg.model["u_max"] < 0:
            raise ConfigError("model.u_max must be >= 0")
        if cfg.model["b"] < 0:
            raise ConfigError("model.b must be >= 0")

    if "trajectory" in doc:
        node = doc["trajectory"]
        _require_mapping(node, "trajectory")
        _check_keys(node, ("N", "t_f", "x0", "x_goal", "x_min", "x_max"), "trajectory")
        t = cfg.trajectory
        if "N" in node:
            t.N = _integer(node["N"], "trajectory.N", minimum=2)
        if "t_f" in node:
            t.t_f = _number(node["t_f"], "trajectory.t_f", positive=True)
        for name in ("x0", "x_goal", "x_min", "x_max"):
            if name in node:
                setattr(t, name, _vector(node[name], f"trajectory.{name}", nx))

    t = cfg.trajectory
    for i in range(nx):
        if not (t.x_min[i] < t.x_max[i]):
            raise ConfigError(f"trajectory.x_min[{i}] must be < x_max[{i}]")
        for name in ("x0", "x_goal"):
            v = getattr(t, name)[i]
            if not (t.x_min[i] <= v <= t.x_max[i]):
                raise ConfigError(f"trajectory.{name}[{i}] = {v} outside box bounds")

    if "costs" in doc:
        node = doc["costs"]
        _require_mapping(node, "costs")
        _check_keys(node, ("Q", "R", "qf_scale"), "costs")
        if "Q" in node:
            cfg.costs.Q = _vector(node["Q"], "costs.Q", nx)
        if "R" in node:
            cfg.costs.R = _vector(node["R"], "costs.R", 1)
        if "qf_scale" in node:
            cfg.costs.qf_scale = _number(node["qf_scale"], "costs.qf_scale", positive=True)
    if any(q <= 0 for q in cfg.costs.Q) or cfg.costs.R[0] <= 0:
        raise ConfigError("costs.Q and costs.R entries must be positive")

    if "funnel" in doc:
        node = doc["funnel"]
        _require_mapping(node, "funnel")
        _check_keys(node, ("budget", "rho_init", "substeps", "verify_samples"), "funnel")
        f = cfg.funnel
        if "budget" in node:
            f.budget = _integer(node["budget"], "funnel.budget", minimum=1)
        if "rho_init" in node:
            f.rho_init = _number(node["rho_init"], "funnel.rho_init", positive=True)
        if "substeps" in node:
            f.substeps = _integer(node["substeps"], "funnel.substeps", minimum=1)
        if "verify_samples" in node:
            f.verify_samples = _integer(node["verify_samples"],
                                        "funnel.verify_samples", minimum=1)

    if "goal" in doc:
        node = doc["goal"]
        _require_mapping(node, "goal")
        _check_keys(node, ("rho_init", "t_hold", "budget"), "goal")
        g = cfg.goal
        if "rho_init" in node:
            g.rho_init = _number(node["rho_init"], "goal.rho_init", positive=True)
        if "t_hold" in node:
            g.t_hold = _number(node["t_hold"], "goal.t_hold", positive=True)
        if "budget" in node:
            g.budget = _integer(node["budget"], "goal.budget", minimum=1)

    if "rtc" in doc:
        node = doc["rtc"]
        _require_mapping(node, "rtc")
        _check_keys(node, ("budget", "objective_budget", "final_budget", "variables"),
                    "rtc")
        r = cfg.rtc
        if "budget" in node:
            r.budget = _integer(node["budget"], "rtc.budget", minimum=1)
        if "objective_budget" in node:
            r.objective_budget = _integer(node["objective_budget"],
                                          "rtc.objective_budget", minimum=1)
        if "final_budget" in node:
            r.final_budget = _integer(node["final_budget"], "rtc.final_budget", minimum=1)
        if "variables" in node:
            _require_mapping(node["variables"], "rtc.variables")
            _check_keys(node["variables"], _HYPER_NAMES, "rtc.variables")
            for name, sub in node["variables"].items():
                r.variables[name] = _variable(sub, f"rtc.variables.{name}",
                                              r.variables[name])

    if "rtcd" in doc:
        node = doc["rtcd"]
        _require_mapping(node, "rtcd")
        _check_keys(node, ("outer_budget", "inner_budget", "variables"), "rtcd")
        r = cfg.rtcd
        if "outer_budget" in node:
            r.outer_budget = _integer(node["outer_budget"], "rtcd.outer_budget", minimum=1)
        if "inner_budget" in node:
            r.inner_budget = _integer(node["inner_budget"], "rtcd.inner_budget", minimum=1)
        if "variables" in node:
            _require_mapping(node["variables"], "rtcd.variables")
            _check_keys(node["variables"], ("m", "l"), "rtcd.variables")
            for name, sub in node["variables"].items():
                r.variables[name] = _variable(sub, f"rtcd.variables.{name}",
                                              r.variables[name])
        for name, spec in r.variables.items():
            if not (spec.lower <= cfg.model[name] <= spec.upper):
                raise ConfigError(f"model.{name} = {cfg.model[name]} outside "
                                  f"rtcd.variables.{name} bounds")

    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    return parse_config(doc if doc is not None else {})


def dump_config(cfg: RunConfig, path):
    """Write a config snapshot that parses back to an equivalent RunConfig."""
    doc = {
        "system": cfg.system,
        "seed": cfg.seed,
        "workers": cfg.workers,
        "model": dict(cfg.model),
        "trajectory": {
            "N": cfg.trajectory.N, "t_f": cfg.trajectory.t_f,
            "x0": list(cfg.trajectory.x0), "x_goal": list(cfg.trajectory.x_goal),
            "x_min": list(cfg.trajectory.x_min), "x_max": list(cfg.trajectory.x_max),
        },
        "costs": {"Q": list(cfg.costs.Q), "R": list(cfg.costs.R),
                  "qf_scale": cfg.costs.qf_scale},
        "funnel": {"budget": cfg.funnel.budget, "rho_init": cfg.funnel.rho_init,
                   "substeps": cfg.funnel.substeps,
                   "verify_samples": cfg.funnel.verify_samples},
        "goal": {"rho_init": cfg.goal.rho_init, "t_hold": cfg.goal.t_hold,
                 "budget": cfg.goal.budget},
        "rtc": {
            "budget": cfg.rtc.budget,
            "objective_budget": cfg.rtc.objective_budget,
            "final_budget": cfg.rtc.final_budget,
            "variables": {
                n: {"min": s.lower, "max": s.upper, "scale": s.scale, "init": s.init}
                for n, s in cfg.rtc.variables.items()},
        },
        "rtcd": {
            "outer_budget": cfg.rtcd.outer_budget,
            "inner_budget": cfg.rtcd.inner_budget,
            "variables": {
                n: {"min": s.lower, "max": s.upper, "scale": s.scale, "init": s.init}
                for n, s in cfg.rtcd.variables.items()},
        },
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
