"""Run configuration: a strict JSON file plus command-line overrides.

Every key is validated before any work starts; unknown keys are
rejected with their full path so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .decoder import DeuConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .optim import TrainConfig
from .refiner import RefinerConfig
from .vision import PatchSpec


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 7
    hr_h: int = 128
    hr_w: int = 96
    translation_frac: float = 0.2
    rotation_deg: float = 20.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    texture_amp: float = 0.10


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/default"
    eval_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def train_config(self) -> TrainConfig:
        """TrainConfig with the top-level loss weights folded in."""
        t = self.train
        return TrainConfig(
            iterations=t.iterations, batch_size=t.batch_size,
            lr_max=t.lr_max, lr_min=t.lr_min, beta1=t.beta1, beta2=t.beta2,
            adam_eps=t.adam_eps, weight_decay=t.weight_decay,
            lookahead_k=t.lookahead_k, lookahead_alpha=t.lookahead_alpha,
            clip_norm=t.clip_norm, shuffle_snapshots=t.shuffle_snapshots,
            checkpoint_every=t.checkpoint_every, loss=self.loss,
        )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _build(cls, data: dict, path: str, builders: dict | None = None):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f.type for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: {sorted(unknown)}")
    kwargs = {}
    builders = builders or {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key in builders:
            kwargs[key] = builders[key](value, sub)
        else:
            kwargs[key] = _check_scalar(value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config at {path or 'top level'}: {e}") from e


def _check_scalar(value, path: str):
    if isinstance(value, (dict, list)):
        raise ConfigError(f"{path}: expected a scalar value")
    return value


def _patch_spec(data, path) -> PatchSpec:
    return _build(PatchSpec, data, path)


def _encoder(data, path) -> EncoderConfig:
    return _build(EncoderConfig, data, path, {"patch": _patch_spec})


def _refiner(data, path) -> RefinerConfig:
    return _build(RefinerConfig, data, path)


def _decoder(data, path) -> DeuConfig:
    return _build(DeuConfig, data, path, {"fold_spec": _patch_spec})


def _model(data, path) -> ModelConfig:
    return _build(ModelConfig, data, path,
                  {"encoder": _encoder, "refiner": _refiner, "decoder": _decoder})


def _loss(data, path) -> LossWeights:
    return _build(LossWeights, data, path)


def _train(data, path) -> TrainConfig:
    if isinstance(data, dict) and "loss" in data:
        raise ConfigError(f"{path}.loss: loss weights belong to the top-level 'loss' section")
    return _build(TrainConfig, data, path)


def _synth(data, path) -> SynthConfig:
    return _build(SynthConfig, data, path)


def _data(data, path) -> DataConfig:
    return _build(DataConfig, data, path, {"synth": _synth})


def _output(data, path) -> OutputConfig:
    return _build(OutputConfig, data, path)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "", {
        "model": _model, "loss": _loss, "train": _train,
        "data": _data, "output": _output,
    })
    # Cross-field check: loss weights ride in TrainConfig during training.
    return cfg


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Read a JSON config file (all fields optional) and apply
    ``key.path=value`` overrides."""
    data: dict = {}
    if path is not None:
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON: {e}") from e
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} must look like key.path=value")
        key, _, raw = ov.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {ov!r} descends into a non-object")
        node[parts[-1]] = value
    return config_from_dict(data)


def synth_params_from(cfg: "RunConfig", seed: int):
    from .data import SynthParams

    s = cfg.data.synth
    return SynthParams(seed=seed, n_frames=s.n_frames, hr_h=s.hr_h, hr_w=s.hr_w,
                       translation_frac=s.translation_frac, rotation_deg=s.rotation_deg,
                       scale_min=s.scale_min, scale_max=s.scale_max,
                       texture_amp=s.texture_amp)
