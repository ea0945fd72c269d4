from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import torch
from torch import nn

from facefill.errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    """Selects and seeds the frozen feature extractor and identity embedder."""

    name: str | None = None  # None resolves through FACEFILL_BACKBONE
    seed: int = 0
    embed_dim: int = 128
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.seed < 0:
            raise ConfigError(f"backbone seed must be non-negative, got {self.seed}")


@runtime_checkable
class FeatureExtractor(Protocol):
    """Frozen multi-tap feature network (the style-loss Φ)."""

    min_size: int

    def __call__(self, x: torch.Tensor) -> list[torch.Tensor]: ...


@runtime_checkable
class IdentityEmbedder(Protocol):
    """Frozen image → identity embedding network (the identity-loss Ψ)."""

    embed_dim: int

    def __call__(self, x: torch.Tensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class Backbones:
    extractor: nn.Module
    embedder: nn.Module

    def to(self, dtype: torch.dtype) -> Backbones:
        self.extractor.to(dtype)
        self.embedder.to(dtype)
        return self

    def modules(self) -> tuple[nn.Module, nn.Module]:
        return self.extractor, self.embedder


class BackboneProvider(Protocol):
    """Builds a frozen extractor/embedder pair for a config."""

    name: str

    def build(self, config: BackboneConfig) -> Backbones:
        """Construct (or load) the networks; both come back frozen."""
        ...


def freeze(module: nn.Module) -> nn.Module:
    """Disable parameter gradients and switch to eval mode.

    Gradients still flow through the module to its input.
    """
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module.eval()


def check_min_size(x: torch.Tensor, min_size: int) -> None:
    h, w = x.shape[-2:]
    if h < min_size or w < min_size:
        raise ConfigError(
            f"input resolution {h}x{w} is below the extractor minimum {min_size}x{min_size}"
        )

