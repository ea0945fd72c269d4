import os

from facefill.errors import ConfigError

from .base import (
    BackboneConfig,
    BackboneProvider,
    Backbones,
    FeatureExtractor,
    IdentityEmbedder,
    freeze,
)
from .external import ExternalWeightsBackbone, export_backbones
from .random_seeded import RandomFeatureExtractor, RandomIdentityEmbedder, RandomSeededBackbone

DEFAULT_BACKBONE = "random_seeded"

BACKBONE_REGISTRY: dict[str, BackboneProvider] = {
    "random_seeded": RandomSeededBackbone(),
    "external_weights": ExternalWeightsBackbone(),
}


def get_backbone(name: str | None = None) -> BackboneProvider:
    """Get backbone provider by name.

    Args:
        name: Provider name. If None, uses FACEFILL_BACKBONE env var,
            falling back to "random_seeded" if unset or empty.
    """
    if name is None:
        name = (os.environ.get("FACEFILL_BACKBONE") or "").strip() or DEFAULT_BACKBONE
    if name not in BACKBONE_REGISTRY:
        available = ", ".join(sorted(BACKBONE_REGISTRY))
        raise ConfigError(f"Unknown backbone: {name}. Available: {available}")
    return BACKBONE_REGISTRY[name]


def build_backbones(config: BackboneConfig) -> Backbones:
    return get_backbone(config.name).build(config)


def list_backbones() -> list[str]:
    """List available backbone names."""
    return list(BACKBONE_REGISTRY.keys())


__all__ = [
    "BACKBONE_REGISTRY",
    "BackboneConfig",
    "BackboneProvider",
    "Backbones",
    "FeatureExtractor",
    "IdentityEmbedder",
    "RandomFeatureExtractor",
    "RandomIdentityEmbedder",
    "build_backbones",
    "export_backbones",
    "freeze",
    "get_backbone",
    "list_backbones",
]
