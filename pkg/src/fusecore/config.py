"""Declarative configuration: YAML files validated into frozen dataclasses.

Unknown keys are errors at every nesting level. Two presets ship with the
package (``toy`` and ``paper``); a user file may name a ``preset`` and
override any subset of its keys.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import yaml

from .perception import EncoderConfig
from .reasoner.decoding import GenerationConfig
from .synth.world import WorldConfig

PRESETS = ("toy", "paper")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClipConfig:
    count: int = 4
    frames_per_clip: int = 4


@dataclass(frozen=True)
class FusionSection:
    n_queries: int = 8
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4


@dataclass(frozen=True)
class LMSection:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 256
    ffn_mult: int = 4


@dataclass(frozen=True)
class ModelSection:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    clips: ClipConfig = field(default_factory=ClipConfig)
    fusion: FusionSection = field(default_factory=FusionSection)
    lm: LMSection = field(default_factory=LMSection)


@dataclass(frozen=True)
class DataSection:
    out_dir: str = "data"
    world: WorldConfig = field(default_factory=WorldConfig)
    splits: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LoraSection:
    r: int = 8
    alpha: float = 16
    targets: object = "all"


@dataclass(frozen=True)
class StageConfig:
    steps: Optional[int] = None
    epochs: Optional[int] = None
    batch_size: int = 8
    lr: float = 1e-3
    floor_lr: float = 0.0
    warmup: int = 0
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-8
    weight_decay: float = 0.05
    grad_clip: Optional[float] = 1.0
    checkpoint_every: int = 0
    lora: Optional[LoraSection] = None
    full_unfreeze: bool = False

    def total_steps(self, n_examples: int) -> int:
        if self.steps is not None:
            return int(self.steps)
        if self.epochs is None:
            raise ConfigError("stage needs either steps or epochs")
        per_epoch = -(-n_examples // self.batch_size)
        return int(self.epochs * per_epoch)


@dataclass(frozen=True)
class TrainingSection:
    pretrain: StageConfig = field(default_factory=StageConfig)
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(default_factory=StageConfig)

    def stage(self, n: int) -> StageConfig:
        return (self.pretrain, self.stage1, self.stage2)[n]


@dataclass(frozen=True)
class Config:
    preset: str = "toy"
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    return x


def _build(cls, data, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    hints = {f.name: f.type for f in dataclasses.fields(cls)}
    for name, value in data.items():
        sub = _nested_type(cls, name, hints[name])
        if sub is not None and value is not None:
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name)
        elif name == "betas":
            kwargs[name] = tuple(float(b) for b in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_NESTED = {
    (Config, "model"): ModelSection,
    (Config, "data"): DataSection,
    (Config, "training"): TrainingSection,
    (Config, "generation"): GenerationConfig,
    (ModelSection, "encoder"): EncoderConfig,
    (ModelSection, "clips"): ClipConfig,
    (ModelSection, "fusion"): FusionSection,
    (ModelSection, "lm"): LMSection,
    (DataSection, "world"): WorldConfig,
    (TrainingSection, "pretrain"): StageConfig,
    (TrainingSection, "stage1"): StageConfig,
    (TrainingSection, "stage2"): StageConfig,
    (StageConfig, "lora"): LoraSection,
}


def _nested_type(cls, name, _hint):
    return _NESTED.get((cls, name))


def deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("fusecore").joinpath("configs", f"{name}.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def from_dict(data: dict, apply_env: bool = True) -> Config:
    """Validate ``data`` on top of the preset it names (default ``toy``).

    ``FUSECORE_SEED`` overrides the seed unless ``apply_env`` is false (used
    when restoring a saved snapshot).
    """
    data = dict(data or {})
    base = preset_dict(data.get("preset", "toy"))
    cfg = _build(Config, deep_merge(base, data), "")
    if apply_env and "FUSECORE_SEED" in os.environ:
        cfg = dataclasses.replace(cfg, seed=int(os.environ["FUSECORE_SEED"]))
    return cfg


def load_config(path=None, overrides: Optional[dict] = None) -> Config:
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        data = deep_merge(data, overrides)
    return from_dict(data)


def load_preset(name: str) -> Config:
    return from_dict({"preset": name})
