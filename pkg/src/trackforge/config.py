"""Run configuration: one JSON document merging every sub-config plus paths."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import VehicleConfig
from .env import EpisodeConfig
from .ppo import TrainerConfig
from .sensors import LidarConfig
from .trackgen import TrackGenConfig

SEED_ENV_VAR = "TRACKFORGE_SEED"


class ConfigError(ValueError):
    """Configuration file failed validation; message lists field paths."""


@dataclass
class RunPaths:
    track_dir: str = "tracks"
    out_dir: str = "out"


@dataclass
class RunConfig:
    seed: int = 0
    track_gen: TrackGenConfig = field(default_factory=TrackGenConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    paths: RunPaths = field(default_factory=RunPaths)

    def validate(self, check_paths: bool = False) -> list[str]:
        errs = []
        for section in ("track_gen", "vehicle", "lidar", "episode", "trainer"):
            for msg in getattr(self, section).validate():
                errs.append(f"{section}.{msg}")
        if self.trainer.stack_depth != self.episode.stack_depth:
            errs.append("trainer.stack_depth: must equal episode.stack_depth")
        if check_paths and not Path(self.paths.track_dir).is_dir():
            errs.append(f"paths.track_dir: directory not found: {self.paths.track_dir}")
        return errs


def _build_section(cls, doc: dict, path: str, errors: list[str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in fields:
            errors.append(f"{path}.{key}: unknown field")
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        errors.append(f"{path}: {e}")
        return cls()


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    errors: list[str] = []
    sections = {
        "track_gen": TrackGenConfig, "vehicle": VehicleConfig,
        "lidar": LidarConfig, "episode": EpisodeConfig, "trainer": TrainerConfig,
        "paths": RunPaths,
    }
    kwargs = {}
    for name, cls in sections.items():
        sub = doc.get(name, {})
        if not isinstance(sub, dict):
            errors.append(f"{name}: must be an object")
            sub = {}
        kwargs[name] = _build_section(cls, sub, name, errors)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
        seed = 0
    for key in doc:
        if key not in sections and key != "seed":
            errors.append(f"{key}: unknown field")
    if errors:
        raise ConfigError("; ".join(errors))
    cfg = RunConfig(seed=seed, **kwargs)
    errors = cfg.validate()
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def load_run_config(path, check_paths: bool = False) -> RunConfig:
    """Parse and validate a run config file; TRACKFORGE_SEED overrides the
    master seed when set."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    cfg = run_config_from_dict(doc)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    if check_paths:
        errors = cfg.validate(check_paths=True)
        if errors:
            raise ConfigError("; ".join(errors))
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "seed": cfg.seed,
        "track_gen": dataclasses.asdict(cfg.track_gen),
        "vehicle": dataclasses.asdict(cfg.vehicle),
        "lidar": dataclasses.asdict(cfg.lidar),
        "episode": dataclasses.asdict(cfg.episode),
        "trainer": dataclasses.asdict(cfg.trainer),
        "paths": dataclasses.asdict(cfg.paths),
    }
