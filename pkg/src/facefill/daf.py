"""Dual attention fusion.

Decoder features are first recalibrated per channel (squeeze-and-excitation
gating), projected to an image, and then blended with the downsampled input
through a learned spatial map alpha:

    z     = mean_hw(F)
    omega = sigmoid(W_U relu(W_D z))
    F_hat = omega * F
    x'    = area_downsample(W_C x)
    alpha = sigmoid(A([W_K F_hat, x']))
    Y     = alpha * W_K F_hat + (1 - alpha) * x'

Where alpha is 0 the input pixel passes through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from facefill.errors import ConfigError, ShapeError

DEFAULT_REDUCTION = 16
ATTENTION_WIDTH = 16
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class FusionOutput:
    image: torch.Tensor
    alpha: torch.Tensor | None
    projected: torch.Tensor
    resized_input: torch.Tensor | None


def channel_attention(
    features: torch.Tensor, squeeze: nn.Conv2d, excite: nn.Conv2d
) -> torch.Tensor:
    """Rescale each channel of [B, C, h, w] by its learned gate."""
    pooled = features.mean(dim=(2, 3), keepdim=True)
    gate = torch.sigmoid(excite(F.relu(squeeze(pooled))))
    return gate * features


def resize_input(x: torch.Tensor, size: tuple[int, int], projection: nn.Conv2d) -> torch.Tensor:
    """Project the raw input with W_C and area-downsample it to ``size``."""
    h, w = x.shape[-2:]
    if size[0] > h or size[1] > w:
        raise ShapeError(f"cannot downsample {h}x{w} input to larger size {size[0]}x{size[1]}")
    projected = projection(x)
    if (h, w) == tuple(size):
        return projected
    return F.interpolate(projected, size=size, mode="area")


def fuse(
    projected: torch.Tensor, resized: torch.Tensor, attention: nn.Module
) -> tuple[torch.Tensor, torch.Tensor]:
    """Blend the projected features with the resized input; returns (image, alpha)."""
    if projected.shape != resized.shape:
        raise ShapeError(
            f"fusion branches are misaligned: {tuple(projected.shape)} vs {tuple(resized.shape)}"
        )
    alpha = torch.sigmoid(attention(torch.cat([projected, resized], dim=1)))
    return alpha * projected + (1.0 - alpha) * resized, alpha


class DualAttentionFusion(nn.Module):
    def __init__(
        self,
        channels: int,
        reduction: int = DEFAULT_REDUCTION,
        attention_width: int = ATTENTION_WIDTH,
    ) -> None:
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigError(
                f"channel count {channels} is not divisible by reduction ratio {reduction}"
            )
        self.channels = channels
        self.reduction = reduction
        self.squeeze = nn.Conv2d(channels, channels // reduction, 1, bias=False)
        self.excite = nn.Conv2d(channels // reduction, channels, 1, bias=False)
        self.input_projection = nn.Conv2d(IMAGE_CHANNELS, IMAGE_CHANNELS, 1, bias=False)
        self.to_image = nn.Conv2d(channels, IMAGE_CHANNELS, 1)
        self.attention = nn.Sequential(
            nn.Conv2d(2 * IMAGE_CHANNELS, attention_width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(attention_width, attention_width, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(attention_width, IMAGE_CHANNELS, 3, padding=1),
        )
        with torch.no_grad():
            self.input_projection.weight.copy_(
                torch.eye(IMAGE_CHANNELS).reshape(IMAGE_CHANNELS, IMAGE_CHANNELS, 1, 1)
            )

    def forward(self, features: torch.Tensor, x: torch.Tensor) -> FusionOutput:
        if features.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} feature channels, got {features.shape[1]}")
        recalibrated = channel_attention(features, self.squeeze, self.excite)
        projected = self.to_image(recalibrated)
        resized = resize_input(x, (features.shape[-2], features.shape[-1]), self.input_projection)
        image, alpha = fuse(projected, resized, self.attention)
        return FusionOutput(image=image, alpha=alpha, projected=projected, resized_input=resized)


class PlainHead(nn.Module):
    """1x1 conv to RGB; stands in for fusion when it is ablated."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.to_image = nn.Conv2d(channels, IMAGE_CHANNELS, 1)

    def forward(self, features: torch.Tensor, x: torch.Tensor) -> FusionOutput:
        projected = self.to_image(features)
        return FusionOutput(image=projected, alpha=None, projected=projected, resized_input=None)
