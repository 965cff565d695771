"""Global configuration: one JSON document covering every stage.

Unknown keys are rejected so typos fail loudly; every default is printable
via the CLI's --print-config.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .codec import CodecSpec
from .data_pipeline import FilterConfig, SceneSpec
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .fusion import FusionConfig
from .inference import (
    DEFAULT_FEATHER_PX,
    DEFAULT_SEGMENT_LENGTH,
    TUNNEL_MARGIN,
    TUNNEL_THRESHOLD,
)
from .mask_augment import AugmentConfig
from .training import TrainConfig


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    segment_length: int = DEFAULT_SEGMENT_LENGTH
    feather_px: int = DEFAULT_FEATHER_PX
    tunnel_threshold: float = TUNNEL_THRESHOLD
    tunnel_margin: float = TUNNEL_MARGIN


@dataclass(frozen=True)
class EvalConfig:
    dilation_px: int = 8
    frame_samples: int = 8


@dataclass(frozen=True)
class GlobalConfig:
    seed: int = 0
    codec: CodecSpec = field(default_factory=CodecSpec)
    scene: SceneSpec = field(default_factory=SceneSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _build(dc_type, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: "
                          f"{', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        nested = f.type if isinstance(f.type, type) else None
        if nested is None:
            # dataclass fields stringified by __future__ annotations
            nested = _FIELD_TYPES.get((dc_type, name))
        if nested is not None and dataclasses.is_dataclass(nested):
            kwargs[name] = _build(nested, value, f"{path}.{name}" if path else name)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return dc_type(**kwargs)


_FIELD_TYPES = {
    (GlobalConfig, "codec"): CodecSpec,
    (GlobalConfig, "scene"): SceneSpec,
    (GlobalConfig, "augment"): AugmentConfig,
    (GlobalConfig, "denoiser"): DenoiserConfig,
    (GlobalConfig, "fusion"): FusionConfig,
    (GlobalConfig, "train"): TrainConfig,
    (GlobalConfig, "filter"): FilterConfig,
    (GlobalConfig, "sampler"): SamplerConfig,
    (GlobalConfig, "eval"): EvalConfig,
}


def config_from_dict(data: dict) -> GlobalConfig:
    return _build(GlobalConfig, data, "")


def load_config(path: str | Path) -> GlobalConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def with_seed(cfg: GlobalConfig, seed: int) -> GlobalConfig:
    """Propagate one global seed into every stage that owns one."""
    return dataclasses.replace(
        cfg,
        seed=seed,
        augment=dataclasses.replace(cfg.augment, seed=seed),
        denoiser=dataclasses.replace(cfg.denoiser, seed=seed),
        train=dataclasses.replace(cfg.train, seed=seed),
    )
