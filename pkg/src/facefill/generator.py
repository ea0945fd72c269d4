"""Stage-2 encoder-decoder with per-scale fusion and UV heads.

Scale k (1 = full resolution) is read from decoder map d_{k-1}, which sits at
H / 2^(k-1). Decoder block i upsamples d_{i+1} (nearest + 3x3 conv) and merges
it with the same-resolution encoder map; the raw input (image + mask) is the
skip for the outermost block.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from facefill.checkpoint import Checkpoint
from facefill.contrastive import ConvTrunk, EncoderConfig
from facefill.daf import DEFAULT_REDUCTION, DualAttentionFusion, FusionOutput, PlainHead
from facefill.errors import CheckpointError, ConfigError, ShapeError

logger = logging.getLogger("facefill.generator")

UV_CHANNELS = 2


@dataclass(frozen=True)
class DecoderConfig:
    num_scales: int = 6
    daf_scales: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    reduction: int = DEFAULT_REDUCTION

    def __post_init__(self) -> None:
        object.__setattr__(self, "daf_scales", tuple(sorted(set(self.daf_scales))))
        if self.num_scales < 1:
            raise ConfigError(f"num_scales must be >= 1, got {self.num_scales}")
        if 1 not in self.daf_scales:
            raise ConfigError("daf_scales must include the full-resolution scale 1")
        if any(k < 1 or k > self.num_scales for k in self.daf_scales):
            raise ConfigError(f"daf_scales {self.daf_scales} fall outside 1..{self.num_scales}")


@dataclass(frozen=True)
class ScaleOutput:
    image: torch.Tensor
    alpha: torch.Tensor | None
    uv: torch.Tensor | None


@dataclass(frozen=True)
class MultiScaleOutput:
    """Outputs keyed by scale index; scale 1 is full resolution."""

    scales: dict[int, ScaleOutput]

    def __getitem__(self, scale: int) -> ScaleOutput:
        return self.scales[scale]

    def __contains__(self, scale: object) -> bool:
        return scale in self.scales

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.scales))

    @property
    def full(self) -> ScaleOutput:
        return self.scales[1]


def _conv_relu(in_channels: int, out_channels: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_channels, out_channels, 3, padding=1), nn.ReLU())


class DecoderBlock(nn.Module):
    def __init__(self, in_channels: int, skip_channels: int, out_channels: int) -> None:
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.up_conv = _conv_relu(in_channels, out_channels)
        self.merge = _conv_relu(out_channels + skip_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        upsampled = self.up_conv(self.up(x))
        return self.merge(torch.cat([upsampled, skip], dim=1))


class UVHead(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(channels, UV_CHANNELS, 3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(features))


class Generator(nn.Module):
    def __init__(
        self,
        encoder_config: EncoderConfig,
        decoder_config: DecoderConfig,
        *,
        use_daf: bool = True,
        use_uv: bool = True,
    ) -> None:
        super().__init__()
        if decoder_config.num_scales > encoder_config.num_stages:
            raise ConfigError(
                f"num_scales {decoder_config.num_scales} exceeds encoder stages "
                f"{encoder_config.num_stages}"
            )
        image_channels = encoder_config.in_channels
        # The mask rides along as one extra input channel.
        self.encoder_config = dataclasses.replace(encoder_config, in_channels=image_channels + 1)
        self.decoder_config = decoder_config
        self.image_channels = image_channels
        self.use_daf = use_daf
        self.use_uv = use_uv
        self.trunk = ConvTrunk(self.encoder_config)

        widths = self.encoder_config.widths
        self.decoder_widths = (encoder_config.base_width, *widths[:-1])
        blocks = []
        for i in range(encoder_config.num_stages):
            in_channels = widths[-1] if i == encoder_config.num_stages - 1 else widths[i]
            skip_channels = self.encoder_config.in_channels if i == 0 else widths[i - 1]
            blocks.append(DecoderBlock(in_channels, skip_channels, self.decoder_widths[i]))
        self.blocks = nn.ModuleList(blocks)

        heads: dict[str, nn.Module] = {}
        for k in decoder_config.daf_scales:
            channels = self.decoder_widths[k - 1]
            if use_daf:
                heads[str(k)] = DualAttentionFusion(channels, decoder_config.reduction)
            else:
                heads[str(k)] = PlainHead(channels)
        self.heads = nn.ModuleDict(heads)
        # Built last so toggling use_uv leaves every other initial weight unchanged.
        self.uv_heads = nn.ModuleDict(
            {str(k): UVHead(self.decoder_widths[k - 1]) for k in decoder_config.daf_scales}
            if use_uv
            else {}
        )

    @property
    def scales(self) -> tuple[int, ...]:
        return self.decoder_config.daf_scales

    def decode(self, inputs: torch.Tensor) -> list[torch.Tensor]:
        """Return decoder maps d_0..d_{S-1} (d_i at H / 2^i)."""
        skips = [inputs, *self.trunk(inputs)]
        current = skips[-1]
        decoded: list[torch.Tensor] = [current] * len(self.blocks)
        for i in reversed(range(len(self.blocks))):
            current = self.blocks[i](current, skips[i])
            decoded[i] = current
        return decoded

    def forward(self, x_q: torch.Tensor, mask: torch.Tensor) -> MultiScaleOutput:
        if mask.dim() != 4 or mask.shape[1] != 1 or mask.shape[-2:] != x_q.shape[-2:]:
            raise ShapeError(f"mask {tuple(mask.shape)} is not aligned with {tuple(x_q.shape)}")
        decoded = self.decode(torch.cat([x_q, mask.to(x_q.dtype)], dim=1))
        outputs: dict[int, ScaleOutput] = {}
        for k in self.scales:
            features = decoded[k - 1]
            fused: FusionOutput = self.heads[str(k)](features, x_q)
            image = fused.image if self.training else fused.image.clamp(0.0, 1.0)
            uv = self.uv_heads[str(k)](features) if self.use_uv else None
            outputs[k] = ScaleOutput(image=image, alpha=fused.alpha, uv=uv)
        return MultiScaleOutput(outputs)


def generate(generator: Generator, x_q: torch.Tensor, mask: torch.Tensor) -> MultiScaleOutput:
    return generator(x_q, mask)


def _widens_to(value: torch.Tensor, reference: torch.Tensor, image_channels: int) -> bool:
    """True when ``value`` is ``reference`` minus the trailing mask input channel."""
    return (
        value.dim() == 4
        and value.shape[1] == image_channels
        and value.shape[0] == reference.shape[0]
        and value.shape[2:] == reference.shape[2:]
    )


def encoder_from_pretrain(
    checkpoint: Checkpoint, generator: Generator, *, prefix: str = "encoder_q"
) -> dict[str, torch.Tensor]:
    """Load the stage-1 query trunk into ``generator``; the projection head is dropped.

    The pretrained first convolution sees only image channels, so its weights
    fill the image slice of the stage-2 kernel and the mask slice starts at 0.
    """
    source = f"{checkpoint.kind} checkpoint"
    pretrained = {
        name[len("trunk.") :]: value
        for name, value in checkpoint.namespace(prefix).items()
        if name.startswith("trunk.")
    }
    if not pretrained:
        raise CheckpointError(f"{source} has no '{prefix}/trunk.*' arrays")
    expected = generator.trunk.state_dict()
    missing = sorted(set(expected) - set(pretrained))
    unexpected = sorted(set(pretrained) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            f"{source}: encoder mismatch (missing={missing[:5]}, unexpected={unexpected[:5]})"
        )
    state: dict[str, torch.Tensor] = {}
    for name, reference in expected.items():
        value = torch.from_numpy(np.array(pretrained[name], copy=True)).to(reference.dtype)
        if value.shape != reference.shape:
            if not _widens_to(value, reference, generator.image_channels):
                raise CheckpointError(
                    f"{source}: '{name}' has shape {tuple(value.shape)}, "
                    f"expected {tuple(reference.shape)}"
                )
            padded = torch.zeros_like(reference)
            padded[:, : generator.image_channels] = value
            value = padded
        state[name] = value
    generator.trunk.load_state_dict(state)
    logger.info("Initialized generator encoder from %s (step %d)", source, checkpoint.step)
    return state
