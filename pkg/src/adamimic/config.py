"""Experiment configuration: nested frozen dataclasses with a strict loader.

Config files are YAML (or JSON, which YAML parses) holding nested mappings
that mirror :class:`ExperimentConfig`. Unknown keys are rejected so that a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from adamimic.ppo import PPOConfig
from adamimic.reference import GaitParams, LegGeometry, build_reference, standing_reference
from adamimic.rewards import RewardConfig, WeightStrategy
from adamimic.sim.model import RobotModel, SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    target_vx: float = 0.4
    ref_vx: float = 0.4


@dataclass(frozen=True)
class GaitConfig:
    step_period: float = 0.5
    lift_fraction: float = 0.04
    height_fraction: float = 0.95
    rate: float = 50.0

    def params(self, v_x: float, leg: LegGeometry) -> GaitParams:
        return GaitParams.for_leg(v_x, leg, self.step_period, self.lift_fraction, self.height_fraction)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    strategy: str = "ada"
    iterations: int = 2000
    torch_threads: int = 1
    checkpoint_every: int = 0
    task: TaskConfig = field(default_factory=TaskConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    robot: RobotModel = field(default_factory=RobotModel)
    sim: SimConfig = field(default_factory=SimConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def __post_init__(self):
        WeightStrategy.parse(self.strategy)
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if abs(self.reward.dt - self.sim.dt) > 1e-15:
            raise ConfigError("reward.dt and sim.dt must agree")

    @property
    def weight_strategy(self) -> WeightStrategy:
        return WeightStrategy.parse(self.strategy)

    def reference(self, v_x: float | None = None):
        """Reference trajectory for ``v_x`` (default: the task's reference speed); 0 gives standing."""
        v = self.task.ref_vx if v_x is None else v_x
        leg = self.robot.leg
        if v == 0:
            return standing_reference(leg, self.gait.height_fraction * leg.length, self.gait.rate,
                                      self.gait.step_period)
        return build_reference(self.gait.params(v, leg), leg, self.gait.rate)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return from_dict(hint, value, where)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in value)
    return value


def from_dict(cls, data: dict, where: str = "config"):
    """Build dataclass ``cls`` from a nested mapping, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
    return path
