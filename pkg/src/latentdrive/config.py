"""Run configuration: JSON files validated against a strict schema.

Unknown keys are hard errors everywhere; a typo in an ablation config
should fail loudly rather than silently run the default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import jsonschema

from .errors import ConfigError
from .model.config import ModelConfig
from .world.types import WorldConfig

_WORLD_FIELDS = {f.name for f in dataclasses.fields(WorldConfig)}
_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}


@dataclass
class StageConfig:
    stage: int
    epochs: int = 2
    steps: int | None = None     # explicit step budget overrides epochs
    lr: float = 1e-4
    batch_size: int = 16
    loss_weights: dict = field(default_factory=dict)

    def validate(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2, or 3, got {self.stage}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        return self


@dataclass
class EvalConfig:
    n_episodes: int = 128
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    flow_steps: int | None = None   # None: use the model default


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: list = field(default_factory=lambda: [
        StageConfig(1), StageConfig(2), StageConfig(3)])
    eval: EvalConfig = field(default_factory=EvalConfig)
    train_episodes: int = 512
    base_seed: int = 0

    def validate(self):
        self.world.validate()
        if [s.stage for s in self.stages] != sorted(s.stage for s in self.stages):
            raise ConfigError("stages must be listed in order")
        for s in self.stages:
            s.validate()
        if self.world.grid_h % self.model.patch or self.world.grid_w % self.model.patch:
            raise ConfigError("grid not divisible by patch size")
        if self.model.d_model % self.model.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.model.d_latent % self.model.dit_heads:
            raise ConfigError("d_latent must be divisible by dit_heads")
        return self

    def stage(self, n) -> StageConfig:
        for s in self.stages:
            if s.stage == n:
                return s
        raise ConfigError(f"no stage {n} in config")


def _props(names, types):
    return {n: {"type": types} for n in names}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "world": {
            "type": "object",
            "additionalProperties": False,
            "properties": _props(_WORLD_FIELDS, ["number", "integer"]),
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **_props(_MODEL_FIELDS - {"fuse_mode"}, ["number", "integer"]),
                "fuse_mode": {"enum": ["mean", "gate"]},
            },
        },
        "stages": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["stage"],
                "properties": {
                    "stage": {"enum": [1, 2, 3]},
                    "epochs": {"type": "integer", "minimum": 0},
                    "steps": {"type": ["integer", "null"], "minimum": 0},
                    "lr": {"type": "number", "exclusiveMinimum": 0},
                    "batch_size": {"type": "integer", "minimum": 1},
                    "loss_weights": {
                        "type": "object",
                        "additionalProperties": {"type": "number"},
                    },
                },
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_episodes": {"type": "integer", "minimum": 0},
                "seeds": {"type": "array", "items": {"type": "integer"}},
                "flow_steps": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "train_episodes": {"type": "integer", "minimum": 0},
        "base_seed": {"type": "integer"},
    },
}


def config_from_dict(raw: dict) -> RunConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema violation: {e.message}") from e
    cfg = RunConfig()
    if "world" in raw:
        cfg.world = WorldConfig(**raw["world"])
    if "model" in raw:
        cfg.model = ModelConfig(**raw["model"])
    if "stages" in raw:
        cfg.stages = [StageConfig(**s) for s in raw["stages"]]
    if "eval" in raw:
        cfg.eval = EvalConfig(**raw["eval"])
    cfg.train_episodes = raw.get("train_episodes", cfg.train_episodes)
    cfg.base_seed = raw.get("base_seed", cfg.base_seed)
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "world": dataclasses.asdict(cfg.world),
        "model": dataclasses.asdict(cfg.model),
        "stages": [dataclasses.asdict(s) for s in cfg.stages],
        "eval": dataclasses.asdict(cfg.eval),
        "train_episodes": cfg.train_episodes,
        "base_seed": cfg.base_seed,
    }
