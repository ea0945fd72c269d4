"""Run configuration: one JSON file mirroring ``RunConfig`` plus dotted overrides."""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any

from facefill.backbones import BackboneConfig
from facefill.contrastive import ContrastiveConfig, EncoderConfig
from facefill.errors import ConfigError
from facefill.generator import DecoderConfig
from facefill.losses import LossWeights


class Stage(StrEnum):
    PRETRAIN = "pretrain"
    JOINT = "joint"


@dataclass(frozen=True)
class AblationFlags:
    use_contrastive_init: bool = True
    use_daf: bool = True
    use_uv: bool = True

    @property
    def label(self) -> str:
        return (
            f"cl{int(self.use_contrastive_init)}-daf{int(self.use_daf)}-uv{int(self.use_uv)}"
        )


@dataclass(frozen=True)
class DataConfig:
    """``root`` = None trains on seeded synthetic faces instead of a directory."""

    root: str | None = None
    train_split: str = "train"
    eval_split: str = "test"
    synthetic_count: int = 64
    eval_count: int = 16
    image_size: tuple[int, int] = (128, 128)
    mask_coverage: tuple[float, float] = (0.1, 0.5)
    workers: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "mask_coverage", tuple(self.mask_coverage))
        if self.synthetic_count < 1 or self.eval_count < 1:
            raise ConfigError("synthetic_count and eval_count must be positive")
        low, high = self.mask_coverage
        if not 0.0 < low <= high <= 0.6:
            raise ConfigError(f"mask_coverage must satisfy 0 < low <= high <= 0.6, got {low, high}")


@dataclass(frozen=True)
class RunConfig:
    stage: Stage = Stage.JOINT
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    joint_lr: float = 1e-4
    batch_size: int = 8
    pretrain_steps: int = 100
    joint_steps: int = 200
    checkpoint_every: int = 50
    plateau_stop: bool = False
    seed: int = 0
    output_dir: str = "runs/default"
    pretrain_checkpoint: str | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "stage", Stage(self.stage))
        except ValueError:
            raise ConfigError(f"unknown stage: {self.stage!r}") from None
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_steps < 0 or self.joint_steps < 0:
            raise ConfigError("step budgets must be non-negative")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.joint_lr <= 0:
            raise ConfigError(f"joint_lr must be > 0, got {self.joint_lr}")
        if not set(self.loss.scales) <= set(self.decoder.daf_scales):
            raise ConfigError(
                f"loss scales {self.loss.scales} are not all emitted by the decoder "
                f"({self.decoder.daf_scales})"
            )
        if self.decoder.num_scales > self.encoder.num_stages:
            raise ConfigError("decoder.num_scales cannot exceed encoder.num_stages")
        divisor = self.encoder.divisor
        h, w = self.data.image_size
        if h % divisor or w % divisor:
            raise ConfigError(f"image_size {h}x{w} is not divisible by 2^num_stages = {divisor}")

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def effective_loss(self) -> LossWeights:
        """Loss weights after ablation: a disabled UV branch contributes nothing."""
        if self.ablation.use_uv:
            return self.loss
        return dataclasses.replace(self.loss, uv=0.0)


_NESTED: dict[str, type[Any]] = {
    "data": DataConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "contrastive": ContrastiveConfig,
    "loss": LossWeights,
    "backbone": BackboneConfig,
    "ablation": AblationFlags,
}


def _tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tupled(item) for item in value)
    return value


def _build(cls: type[Any], data: Mapping[str, Any], where: str) -> Any:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be an object, got {type(data).__name__}")
    known = {item.name for item in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys in {where or 'config'}: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        nested = _NESTED.get(key) if cls is RunConfig else None
        path = f"{where}.{key}" if where else key
        kwargs[key] = _build(nested, value, path) if nested else _tupled(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    config: RunConfig = _build(RunConfig, data, "")
    return config


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """JSON-ready mapping; round-trips through ``config_from_dict``."""
    payload = dataclasses.asdict(config)
    payload["stage"] = str(config.stage)
    return json.loads(json.dumps(payload))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """Apply ``dotted.key=value`` strings; values parse as JSON, else stay strings."""
    payload = config_to_dict(config)
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {override!r}")
        parts = key.strip().split(".")
        target = payload
        for part in parts[:-1]:
            child = target.get(part)
            if not isinstance(child, dict):
                raise ConfigError(f"unknown config section in override: {key}")
            target = child
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key in override: {key}")
        target[parts[-1]] = _parse_value(raw)
    return config_from_dict(payload)


def write_config(config: RunConfig, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")
    return target
