"""Run configuration: nested dataclasses loaded from JSON with strict key checking."""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError
from .heads import LossWeights
from .planner.diffusion import PlannerConfig
from .sim.scenes import KINDS
from .sim.scoring import MetricConfig


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    det_queries: int = 30
    det_dim: int = 64
    seg_hidden: int = 64
    seg_grid: tuple[int, int] = (64, 64)
    det_extent: float = 32.0

    def validate(self) -> None:
        self.backbone.validate()
        self.planner.validate()
        if self.det_queries < 1 or self.det_dim < 1 or self.seg_hidden < 1:
            raise ConfigError("head sizes must be positive")


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    milestones: tuple[int, ...] = (20, 27)
    gamma: float = 0.1
    encoder_lr_mult: float = 0.5
    epochs: int = 30
    batch_size: int = 8

    def validate(self) -> None:
        if not (self.lr > 0) or self.weight_decay < 0 or not (0 < self.gamma <= 1):
            raise ConfigError("optimizer needs lr > 0, weight_decay >= 0 and gamma in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.encoder_lr_mult < 0:
            raise ConfigError("epochs and batch_size must be >= 1, encoder_lr_mult >= 0")


@dataclass
class DataConfig:
    """Either scene files or a generator spec (counts and seeds per split)."""

    train_scenes: str | None = None
    eval_scenes: str | None = None
    train_count: int = 200
    eval_count: int = 200
    train_seed: int = 1
    eval_seed: int = 2
    kinds: tuple[str, ...] = KINDS

    def validate(self) -> None:
        bad = [k for k in self.kinds if k not in KINDS]
        if bad or not self.kinds:
            raise ConfigError(f"unknown scene kinds {bad}; expected a subset of {KINDS}")
        if self.train_count < 1 or self.eval_count < 1:
            raise ConfigError("scene counts must be >= 1")


@dataclass
class OutputConfig:
    checkpoint: str = "prix.ckpt"
    train_log: str | None = None  # default: <checkpoint>.csv


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: MetricConfig = field(default_factory=MetricConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    dtype: str = "float32"
    timing_runs: int = 100

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.loss.validate()
        self.optim.validate()
        self.data.validate()
        self.eval.validate()
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.timing_runs < 0:
            raise ConfigError("timing_runs must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ------------------------------------------------------------------ loading


def _coerce(value, default, hint, where: str):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(type(default), value, where)
    if isinstance(default, bool) or hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return dict(value)
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if isinstance(default, int) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{where}: expected an integer, got {value!r}")
            value = int(value)
        return type(default)(value) if isinstance(default, float) else value
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    if default is None and value is not None and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string or null, got {value!r}")
    return value


def _build(cls, data: dict, where: str = ""):
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys {[f'{where}{k}' for k in unknown]}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], getattr(defaults, f.name), hints.get(f.name),
                                     f"{where}{f.name}.")
    return dataclasses.replace(defaults, **kwargs)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _build(RunConfig, data).validate()


def load_config(path: str | os.PathLike | None, env: dict | None = None) -> RunConfig:
    """Read a JSON config (missing keys take defaults); ``PRIX_SEED`` overrides the seed."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
        cfg = config_from_dict(data)
    env = os.environ if env is None else env
    if env.get("PRIX_SEED") not in (None, ""):
        try:
            cfg.seed = int(env["PRIX_SEED"])
        except ValueError as e:
            raise ConfigError(f"PRIX_SEED must be an integer, got {env['PRIX_SEED']!r}") from e
    return cfg.validate()
