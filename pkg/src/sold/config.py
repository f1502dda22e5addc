"""Run configuration (INI sections per module) and named seed substreams."""

from __future__ import annotations

import configparser
import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ModelConfig
from .rewards import RewardSpec
from .rl import PPOConfig
from .train import TrainConfig


@dataclass
class ScheduleConfig:
    T: int = 100
    s: float = 0.008


@dataclass
class DataConfig:
    n: int = 200
    min_len: int = 24
    max_len: int = 64
    k_neighbors: int = 16
    ratios: str = "7,1,2"
    coord_noise: float = 0.0

    def ratio_tuple(self) -> tuple[float, ...]:
        try:
            return tuple(float(x) for x in self.ratios.split(","))
        except ValueError:
            raise ConfigError(f"data.ratios must be comma-separated numbers, got {self.ratios!r}") from None


@dataclass
class SampleConfig:
    n: int = 1
    method: str = "ddpm"
    eta: float = 1.0
    k: int = 1
    probs: bool = True


@dataclass
class AblationConfig:
    dims: str = "8,16,32,64,128"
    tau_arms: str = "long_only,short_only,tau60,tau90"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    data: DataConfig = field(default_factory=DataConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self) -> "RunConfig":
        try:
            self.model.validate()
            self.train.validate()
            self.ppo.validate()
            self.reward.validate(self.schedule.T)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.schedule.T < 1 or self.workers < 1:
            raise ConfigError("schedule.T and workers must be >= 1")
        if self.sample.method not in ("ddpm", "ddim"):
            raise ConfigError(f"sample.method must be ddpm or ddim, got {self.sample.method!r}")
        self.data.ratio_tuple()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = ("model", "schedule", "train", "ppo", "reward", "data", "sample", "ablation")


def _coerce(value: str, default, key: str):
    kind = type(default)
    try:
        if kind is bool:
            v = value.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return v in ("true", "1", "yes")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def _apply(obj, items, section):
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in items:
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        setattr(obj, key, _coerce(value, getattr(obj, key), f"{section}.{key}"))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI file; every key must exist in the matching dataclass."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            items = parser.items(section)
            if section == "run":
                _apply(cfg, [(k, v) for k, v in items if k in ("seed", "workers")], "run")
                extra = [k for k, _ in items if k not in ("seed", "workers")]
                if extra:
                    raise ConfigError(f"unknown key run.{extra[0]}")
            elif section in SECTIONS:
                _apply(getattr(cfg, section), items, section)
            else:
                raise ConfigError(f"unknown config section [{section}]")
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def write_config(path, cfg: RunConfig) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed), "workers": str(cfg.workers)}
    for section in SECTIONS:
        parser[section] = {k: str(v) for k, v in dataclasses.asdict(getattr(cfg, section)).items()}
    with open(path, "w") as fh:
        parser.write(fh)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stage, derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
