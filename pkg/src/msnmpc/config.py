"""Episode configuration and its strict JSON loader.

Config files mirror the dataclass field names exactly. Unknown keys, wrong
nesting and invalid values raise ``ConfigError`` with the offending path.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .delay_model import DEFAULT_N_MAX, TAIL_POLICIES, GammaParams, ScenarioSet, check_sampling_times
from .dynamics import DomainError, ModelParams
from .obstacles import CylinderObstacle
from .ocp import OcpWeights, default_bounds
from .solver import SolverConfig

CONTROLLER_MODES = ("multistage", "standard", "fixed_weights")
SHIPPED_SCENARIOS = ("scenario1", "scenario2", "scenario3")


class ConfigError(ValueError):
    """Malformed or inconsistent episode configuration."""


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-3
    max_iterations: int = 500
    memory: int = 10
    time_budget_ms: Optional[float] = None

    def to_solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=int(self.max_iterations),
            tolerance=float(self.tolerance),
            memory=int(self.memory),
            time_budget=None if self.time_budget_ms is None else float(self.time_budget_ms),
        )


@dataclass(frozen=True)
class ControllerConfig:
    """Controller tuning.

    ``standard`` predicts with the single nominal sampling time. The other
    modes use the full ``sampling_times`` tree; their weights are
    ``fixed_weights`` when given, the delay fit when delays are enabled,
    and uniform otherwise. ``safety_margin`` inflates every obstacle radius
    inside the controller only. ``warm_start_tilt`` offsets the pitch command
    of the very first warm start, which breaks the mirror symmetry of worlds
    whose start, goal and obstacle are collinear.
    """

    mode: str = "multistage"
    horizon: int = 40
    sampling_times: tuple = (0.05, 0.07, 0.1, 0.2, 0.33)
    nominal_sampling_time: float = 0.05
    fixed_weights: Optional[tuple] = None
    tail_policy: str = "renormalize"
    q_x: tuple = (6.0, 6.0, 20.0, 50.0, 50.0, 10.0, 20.0, 20.0)
    q_u: tuple = (20.0, 20.0, 20.0)
    q_du: tuple = (40.0, 65.0, 65.0)
    mu_obs: float = 4.0
    penalty_power: int = 1
    max_angle: float = math.pi / 18
    max_thrust: Optional[float] = None
    safety_margin: float = 0.25
    warm_start_tilt: float = 0.0
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.mode not in CONTROLLER_MODES:
            raise DomainError(f"mode must be one of {CONTROLLER_MODES}")
        if int(self.horizon) < 2:
            raise DomainError("horizon must be at least 2")
        check_sampling_times(tuple(self.sampling_times))
        if not self.nominal_sampling_time > 0:
            raise DomainError("nominal_sampling_time must be positive")
        if self.tail_policy not in TAIL_POLICIES:
            raise DomainError(f"tail_policy must be one of {TAIL_POLICIES}")
        if self.mode == "fixed_weights" and self.fixed_weights is None:
            raise DomainError("fixed_weights mode needs a fixed_weights list")
        if self.fixed_weights is not None and len(self.fixed_weights) != len(self.sampling_times):
            raise DomainError("fixed_weights needs one entry per sampling time")
        if not (0 < self.max_angle <= math.pi / 2):
            raise DomainError("max_angle must lie in (0, pi/2]")
        if self.safety_margin < 0:
            raise DomainError("safety_margin must be non-negative")
        self.ocp_weights()

    def branch_times(self) -> tuple:
        if self.mode == "standard":
            return (float(self.nominal_sampling_time),)
        return tuple(float(t) for t in self.sampling_times)

    def initial_scenarios(self) -> ScenarioSet:
        times = self.branch_times()
        if self.mode != "standard" and self.fixed_weights is not None:
            w = [float(v) for v in self.fixed_weights]
            total = sum(w)
            if min(w) < 0 or total <= 0:
                raise DomainError("fixed_weights must be non-negative with a positive sum")
            return ScenarioSet(times, tuple(v / total for v in w))
        return ScenarioSet.uniform(times)

    def adaptive(self, delays_enabled: bool) -> bool:
        return self.mode != "standard" and self.fixed_weights is None and delays_enabled

    def ocp_weights(self) -> OcpWeights:
        return OcpWeights(
            tuple(self.q_x), tuple(self.q_u), tuple(self.q_du), float(self.mu_obs), int(self.penalty_power)
        )

    def bounds(self, g: float):
        lo, hi = default_bounds(g, self.max_angle)
        if self.max_thrust is not None:
            hi[0] = float(self.max_thrust)
        return lo, hi


@dataclass(frozen=True)
class DelayConfig:
    enabled: bool = False
    alpha: float = 12.0
    beta: float = 0.015
    seed: int = 0
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        GammaParams(self.alpha, self.beta)
        if int(self.n_max) < 2:
            raise DomainError("n_max must be at least 2")

    @property
    def truth(self) -> GammaParams:
        return GammaParams(float(self.alpha), float(self.beta))


@dataclass(frozen=True)
class EpisodeConfig:
    name: str = "episode"
    model: ModelParams = field(default_factory=ModelParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    delays: DelayConfig = field(default_factory=DelayConfig)
    obstacles: tuple = ()
    start: tuple = (0.0, 0.0, 0.0)
    goal: tuple = (0.0, 0.0, 1.0)
    goal_radius: float = 0.3
    max_sim_time: float = 20.0
    plant_substep: float = 0.001
    stop_at_goal: bool = True
    log_solve_time: bool = False

    def __post_init__(self):
        for name in ("start", "goal"):
            v = getattr(self, name)
            if len(v) != 3 or not all(math.isfinite(float(c)) for c in v):
                raise DomainError(f"{name} must be three finite coordinates")
        if not self.max_sim_time > 0:
            raise DomainError("max_sim_time must be positive")
        if not self.goal_radius > 0:
            raise DomainError("goal_radius must be positive")
        smallest = min(min(self.controller.sampling_times), self.controller.nominal_sampling_time)
        if not (0 < self.plant_substep <= smallest + 1e-15):
            raise DomainError("plant_substep must be positive and at most the smallest sampling time")
        for o in self.obstacles:
            if not isinstance(o, CylinderObstacle):
                raise DomainError("obstacles must be CylinderObstacle instances")

    def with_overrides(self, seed=None, mode=None, solver=None, max_sim_time=None) -> "EpisodeConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, delays=dataclasses.replace(cfg.delays, seed=int(seed)))
        if mode is not None:
            cfg = dataclasses.replace(cfg, controller=dataclasses.replace(cfg.controller, mode=mode))
        if solver:
            new = dataclasses.replace(cfg.controller.solver, **solver)
            cfg = dataclasses.replace(cfg, controller=dataclasses.replace(cfg.controller, solver=new))
        if max_sim_time is not None:
            cfg = dataclasses.replace(cfg, max_sim_time=float(max_sim_time))
        return cfg


# nested sections: (owner class, key) -> builder
_NESTED = {
    (EpisodeConfig, "model"): ModelParams,
    (EpisodeConfig, "controller"): ControllerConfig,
    (EpisodeConfig, "delays"): DelayConfig,
    (ControllerConfig, "solver"): SolverSettings,
}


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _check_type(f, value, path: str) -> None:
    default = f.default if f.default is not dataclasses.MISSING else None
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    by_name = {f.name: f for f in fields(cls) if f.init}
    allowed = set(by_name)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if (cls, key) in _NESTED:
            kwargs[key] = _build(_NESTED[(cls, key)], value, path)
        elif cls is EpisodeConfig and key == "obstacles":
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[key] = tuple(_build(CylinderObstacle, o, f"{path}[{i}]") for i, o in enumerate(value))
        else:
            _check_type(by_name[key], value, path)
            kwargs[key] = _freeze(value)
    try:
        return cls(**kwargs)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> EpisodeConfig:
    return _build(EpisodeConfig, data, "")


def config_to_dict(obj) -> dict:
    """Plain-JSON view of a config; ``config_from_dict`` inverts it."""
    if dataclasses.is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj) if f.init}
    if isinstance(obj, (tuple, list)):
        return [config_to_dict(v) for v in obj]
    return obj


def shipped_config_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in SHIPPED_SCENARIOS:
        raise ConfigError(f"no shipped scenario called {name!r}")
    return Path(str(resources.files("msnmpc") / "scenarios" / f"{stem}.json"))


def load_config(path) -> EpisodeConfig:
    """Read a JSON episode config. Bare shipped names such as ``scenario1`` also resolve."""
    p = Path(path)
    if not p.exists():
        try:
            p = shipped_config_path(str(path))
        except ConfigError:
            raise ConfigError(f"config file not found: {path}") from None
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
