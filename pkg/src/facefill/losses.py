"""Stage-2 objectives.

Structure terms (reconstruction L1 and validity-masked UV MSE) are averaged
over the output scales; texture terms (Gram style distance and identity
embedding MSE) over the texture scales:

    total = mean_k(l_rec * rec_k + l_uv * uv_k) + mean_j(l_style * style_j + l_ip * ip_j)
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from facefill.errors import ConfigError, ContractError, ShapeError
from facefill.generator import MultiScaleOutput

logger = logging.getLogger("facefill.losses")

# Area-averaged validity below this counts as a boundary pixel.
_FULLY_VALID = 1.0 - 1e-6

Extractor = Callable[[torch.Tensor], list[torch.Tensor]]
Embedder = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    rec: float = 6.0
    uv: float = 0.1
    style: float = 240.0
    ip: float = 0.1
    scales: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    texture_scales: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(sorted(set(self.scales))))
        object.__setattr__(self, "texture_scales", tuple(sorted(set(self.texture_scales))))
        for name in ("rec", "uv", "style", "ip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight '{name}' must be >= 0, got {getattr(self, name)}")
        if not self.scales:
            raise ConfigError("loss needs at least one structure scale")
        if not set(self.texture_scales) <= set(self.scales):
            raise ConfigError(
                f"texture_scales {self.texture_scales} must be a subset of scales {self.scales}"
            )


@dataclass(frozen=True)
class Targets:
    """Full-resolution supervision: Y [B,3,H,W], C [B,2,H,W], validity [B,1,H,W]."""

    image: torch.Tensor
    uv: torch.Tensor | None = None
    uv_valid: torch.Tensor | None = None

    def at(self, size: tuple[int, int]) -> Targets:
        """Area-downsample to ``size``; a pixel stays UV-valid only if fully covered."""
        if tuple(self.image.shape[-2:]) == tuple(size):
            return self
        image = F.interpolate(self.image, size=size, mode="area")
        if self.uv is None or self.uv_valid is None:
            return Targets(image=image)
        uv = F.interpolate(self.uv, size=size, mode="area")
        coverage = F.interpolate(self.uv_valid, size=size, mode="area")
        valid = (coverage >= _FULLY_VALID).to(uv.dtype)
        return Targets(image=image, uv=uv * valid, uv_valid=valid)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: dict[str, float] = field(default_factory=dict)

    def as_record(self) -> dict[str, float]:
        return dict(self.terms)


def _require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: prediction {tuple(a.shape)} vs target {tuple(b.shape)}")


def rec_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error."""
    _require_same_shape(prediction, target, "rec_loss")
    return (prediction - target).abs().mean()


def uv_loss(prediction: torch.Tensor, target: torch.Tensor, validity: torch.Tensor) -> torch.Tensor:
    """Mean squared error over both UV channels on validity = 1 pixels only."""
    _require_same_shape(prediction, target, "uv_loss")
    weight = validity.to(prediction.dtype).expand_as(prediction)
    count = weight.sum()
    if float(count) == 0.0:
        return (prediction * 0.0).sum()
    return (((prediction - target) ** 2) * weight).sum() / count


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """[B, C, h, w] -> [B, C, C], unnormalized."""
    flat = features.flatten(2)
    return flat @ flat.transpose(1, 2)


def style_loss(
    prediction: torch.Tensor, target: torch.Tensor, extractor: Extractor
) -> torch.Tensor:
    """Mean over taps of ||G(target) - G(prediction)||_1 / C_i^2, averaged over the batch."""
    _require_same_shape(prediction, target, "style_loss")
    taps_pred = extractor(prediction)
    taps_target = extractor(target)
    per_tap = []
    for pred_map, target_map in zip(taps_pred, taps_target, strict=True):
        channels = pred_map.shape[1]
        distance = (gram_matrix(target_map) - gram_matrix(pred_map)).abs().sum(dim=(1, 2))
        per_tap.append(distance / (channels * channels))
    return torch.stack(per_tap).mean(dim=0).mean()


def ip_loss(prediction: torch.Tensor, target: torch.Tensor, embedder: Embedder) -> torch.Tensor:
    """Mean squared error between identity embeddings."""
    _require_same_shape(prediction, target, "ip_loss")
    return F.mse_loss(embedder(prediction), embedder(target))


def _mean(values: Sequence[torch.Tensor], like: torch.Tensor) -> torch.Tensor:
    if not values:
        return like.new_zeros(())
    return torch.stack(list(values)).mean()


def total_loss(
    outputs: MultiScaleOutput,
    targets: Targets,
    weights: LossWeights,
    extractor: Extractor,
    embedder: Embedder,
) -> LossBreakdown:
    """Weighted multi-scale objective plus a per-term breakdown for logging.

    Scales whose UV prediction or UV ground truth is absent contribute a UV
    term of exactly 0.
    """
    missing = [k for k in weights.scales if k not in outputs]
    if missing:
        raise ContractError(f"outputs are missing scales {missing} required by the loss")

    reference = outputs[weights.scales[0]].image
    terms: dict[str, float] = {}
    rec_terms: list[torch.Tensor] = []
    uv_terms: list[torch.Tensor] = []
    style_terms: list[torch.Tensor] = []
    ip_terms: list[torch.Tensor] = []
    for k in weights.scales:
        output = outputs[k]
        size = (output.image.shape[-2], output.image.shape[-1])
        scaled = targets.at(size)
        rec_k = rec_loss(output.image, scaled.image)
        if output.uv is not None and scaled.uv is not None and scaled.uv_valid is not None:
            uv_k = uv_loss(output.uv, scaled.uv, scaled.uv_valid)
        else:
            uv_k = reference.new_zeros(())
        rec_terms.append(rec_k)
        uv_terms.append(uv_k)
        terms[f"rec_{k}"] = float(rec_k.detach())
        terms[f"uv_{k}"] = float(uv_k.detach())
        if k in weights.texture_scales:
            style_k = style_loss(output.image, scaled.image, extractor)
            ip_k = ip_loss(output.image, scaled.image, embedder)
            style_terms.append(style_k)
            ip_terms.append(ip_k)
            terms[f"style_{k}"] = float(style_k.detach())
            terms[f"ip_{k}"] = float(ip_k.detach())

    rec = _mean(rec_terms, reference)
    uv = _mean(uv_terms, reference)
    style = _mean(style_terms, reference)
    ip = _mean(ip_terms, reference)
    structure = weights.rec * rec + weights.uv * uv
    texture = weights.style * style + weights.ip * ip
    total = structure + texture
    terms.update(
        rec=float(rec.detach()),
        uv=float(uv.detach()),
        style=float(style.detach()),
        ip=float(ip.detach()),
        struct=float(structure.detach()),
        texture=float(texture.detach()),
        total=float(total.detach()),
    )
    return LossBreakdown(total=total, terms=terms)
