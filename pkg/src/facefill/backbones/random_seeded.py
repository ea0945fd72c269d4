"""Seeded random convolutional backbones.

Stand-ins for pretrained perceptual and face-recognition networks: weights are
drawn once from a seeded generator and never trained. Random frozen features
still give a valid Gram-based style metric and a stable embedding space.
"""

from __future__ import annotations

import logging
import math

import torch
import torch.nn.functional as F
from torch import nn

from facefill.backbones.base import BackboneConfig, Backbones, check_min_size, freeze

logger = logging.getLogger("facefill.backbones")

EXTRACTOR_WIDTHS = (16, 32, 64)
EXTRACTOR_STRIDES = (1, 2, 2)
EXTRACTOR_MIN_SIZE = 8
EMBEDDER_WIDTHS = (32, 64)
EMBEDDER_POOL = 4


def seeded_init_(module: nn.Module, seed: int) -> nn.Module:
    """He-normal conv/linear weights and zero biases from one torch.Generator."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, nn.Conv2d | nn.Linear):
                fan_in = layer.weight[0].numel()
                std = math.sqrt(2.0 / fan_in)
                sample = torch.randn(layer.weight.shape, generator=generator, dtype=torch.float64)
                layer.weight.copy_((sample * std).to(layer.weight.dtype))
                if layer.bias is not None:
                    layer.bias.zero_()
    return module


class RandomFeatureExtractor(nn.Module):
    """Three conv stages with a tap after each (N = 3)."""

    min_size = EXTRACTOR_MIN_SIZE

    def __init__(self) -> None:
        super().__init__()
        stages = []
        in_channels = 3
        for width, stride in zip(EXTRACTOR_WIDTHS, EXTRACTOR_STRIDES, strict=True):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_channels, width, 3, stride=stride, padding=1),
                    nn.ReLU(),
                )
            )
            in_channels = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        check_min_size(x, self.min_size)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


class RandomIdentityEmbedder(nn.Module):
    def __init__(self, embed_dim: int = 128) -> None:
        super().__init__()
        self.embed_dim = embed_dim
        first, second = EMBEDDER_WIDTHS
        self.features = nn.Sequential(
            nn.Conv2d(3, first, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(first, second, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.project = nn.Linear(second * EMBEDDER_POOL * EMBEDDER_POOL, embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = F.adaptive_avg_pool2d(self.features(x), EMBEDDER_POOL)
        return self.project(pooled.flatten(1))


def build_architectures(config: BackboneConfig) -> Backbones:
    return Backbones(
        extractor=RandomFeatureExtractor(),
        embedder=RandomIdentityEmbedder(config.embed_dim),
    )


class RandomSeededBackbone:
    name = "random_seeded"

    def build(self, config: BackboneConfig) -> Backbones:
        backbones = build_architectures(config)
        # Distinct streams so changing one network never reshuffles the other.
        seeded_init_(backbones.extractor, config.seed * 2)
        seeded_init_(backbones.embedder, config.seed * 2 + 1)
        logger.debug("Built random_seeded backbones (seed=%d)", config.seed)
        return Backbones(extractor=freeze(backbones.extractor), embedder=freeze(backbones.embedder))
