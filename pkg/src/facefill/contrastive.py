"""Stage-1 contrastive pretraining: Siamese encoders, momentum update, key queue."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from facefill.errors import CapacityError, ConfigError, ShapeError, StateError
from facefill.telemetry import trace_span

logger = logging.getLogger("facefill.contrastive")

MAX_WIDTH_DOUBLINGS = 3


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    base_width: int = 32
    num_stages: int = 6
    embed_dim: int = 128

    def __post_init__(self) -> None:
        if self.num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {self.num_stages}")
        if self.in_channels < 1 or self.base_width < 1 or self.embed_dim < 1:
            raise ConfigError("encoder channel counts must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        """Output channels per stage: base, 2x, 4x, 8x, then flat."""
        return tuple(
            self.base_width * 2 ** min(i, MAX_WIDTH_DOUBLINGS) for i in range(self.num_stages)
        )

    @property
    def divisor(self) -> int:
        return int(2**self.num_stages)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    momentum: float = 0.9
    queue_size: int = 4096
    lr: float = 0.015

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.queue_size < 1:
            raise ConfigError(f"queue_size must be >= 1, got {self.queue_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")


class ConvTrunk(nn.Module):
    """Strided conv stack; each stage halves H and W and returns its map."""

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        stages = []
        in_channels = config.in_channels
        for width in config.widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_channels, width, 3, stride=2, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(width, width, 3, padding=1),
                    nn.ReLU(),
                )
            )
            in_channels = width
        self.stages = nn.ModuleList(stages)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected [B, {self.config.in_channels}, H, W] input, got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        divisor = self.config.divisor
        if h % divisor or w % divisor:
            raise ShapeError(
                f"input {h}x{w} is not divisible by 2^{self.config.num_stages} = {divisor}"
            )

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        self.check_input(x)
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


class ConvEncoder(nn.Module):
    """Trunk plus projection head; returns L2-normalized embeddings.

    Stage 2 keeps only the trunk (its per-stage maps feed the decoder skips).
    """

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        self.trunk = ConvTrunk(config)
        self.head = nn.Linear(config.widths[-1], config.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = self.trunk(x)[-1].mean(dim=(2, 3))
        return F.normalize(self.head(pooled), dim=1)


def encode(encoder: ConvEncoder, x: torch.Tensor) -> torch.Tensor:
    """Embed a batch [B, 3, H, W] into unit-norm rows [B, embed_dim]."""
    return encoder(x)


@torch.no_grad()
def momentum_update(query: nn.Module, key: nn.Module, m: float) -> None:
    """theta_k <- m * theta_k + (1 - m) * theta_q, parameter by parameter."""
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"momentum must be in [0, 1], got {m}")
    query_params = dict(query.named_parameters())
    key_params = dict(key.named_parameters())
    if query_params.keys() != key_params.keys():
        raise ShapeError("query and key encoders have different parameter names")
    for name, theta_q in query_params.items():
        theta_k = key_params[name]
        if theta_k.shape != theta_q.shape:
            raise ShapeError(
                f"parameter '{name}' shape mismatch: key {tuple(theta_k.shape)} "
                f"vs query {tuple(theta_q.shape)}"
            )
        theta_k.mul_(m).add_(theta_q.detach(), alpha=1.0 - m)


class FeatureQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings."""

    def __init__(self, capacity: int, dim: int, *, dtype: torch.dtype = torch.float32) -> None:
        if capacity < 1 or dim < 1:
            raise ConfigError(f"queue needs positive capacity and dim, got {capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self.entries = torch.zeros(capacity, dim, dtype=dtype)
        self.head = 0
        self.filled = 0

    def fill_random(self, generator: torch.Generator) -> None:
        """Start full of random unit vectors so the first step has negatives."""
        sample = torch.randn(self.capacity, self.dim, generator=generator, dtype=torch.float64)
        self.entries = F.normalize(sample, dim=1).to(self.entries.dtype)
        self.head = 0
        self.filled = self.capacity

    def enqueue(self, keys: torch.Tensor) -> None:
        if keys.dim() != 2 or keys.shape[1] != self.dim:
            raise ShapeError(f"keys must be [B, {self.dim}], got {tuple(keys.shape)}")
        batch = keys.shape[0]
        if batch > self.capacity:
            raise CapacityError(f"cannot enqueue {batch} keys into a queue of {self.capacity}")
        positions = (self.head + torch.arange(batch)) % self.capacity
        self.entries[positions] = keys.detach().to(self.entries.dtype)
        self.head = (self.head + batch) % self.capacity
        self.filled = min(self.filled + batch, self.capacity)

    def negatives(self) -> torch.Tensor:
        # Until the first wraparound the live entries are exactly [0, filled).
        return self.entries[: self.filled]

    def ordered(self) -> torch.Tensor:
        """Stored entries from oldest to newest."""
        if self.filled < self.capacity:
            return self.entries[: self.filled].clone()
        return torch.cat([self.entries[self.head :], self.entries[: self.head]])

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "entries": self.entries.detach().cpu().numpy().copy(),
            "head": np.array(self.head, dtype=np.int64),
            "filled": np.array(self.filled, dtype=np.int64),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        entries = arrays["entries"]
        if tuple(entries.shape) != (self.capacity, self.dim):
            raise ShapeError(
                f"queue entries {tuple(entries.shape)} do not match ({self.capacity}, {self.dim})"
            )
        self.entries = torch.from_numpy(np.array(entries, copy=True)).to(self.entries.dtype)
        self.head = int(np.asarray(arrays["head"]).item())
        self.filled = int(np.asarray(arrays["filled"]).item())


def info_nce_loss(
    z_q: torch.Tensor,
    z_k_pos: torch.Tensor,
    queue: FeatureQueue,
    temperature: float,
) -> torch.Tensor:
    """Mean InfoNCE over the batch, with the queue's filled entries as negatives."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    if queue.filled == 0:
        raise StateError("info_nce_loss needs at least one queued negative")
    if z_q.shape != z_k_pos.shape:
        raise ShapeError(f"query {tuple(z_q.shape)} and key {tuple(z_k_pos.shape)} differ")
    l_pos = (z_q * z_k_pos).sum(dim=1, keepdim=True)
    l_neg = z_q @ queue.negatives().to(z_q.dtype).detach().T
    logits = torch.cat([l_pos, l_neg], dim=1) / temperature
    labels = torch.zeros(logits.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, labels)


class ContrastiveModel(nn.Module):
    """Query encoder, momentum key encoder and the key queue."""

    def __init__(
        self,
        encoder_config: EncoderConfig,
        config: ContrastiveConfig,
        *,
        queue_seed: int = 0,
    ) -> None:
        super().__init__()
        self.config = config
        self.encoder_q = ConvEncoder(encoder_config)
        # The key encoder starts as an exact copy of the query encoder.
        self.encoder_k = copy.deepcopy(self.encoder_q)
        for parameter in self.encoder_k.parameters():
            parameter.requires_grad_(False)
        self.queue = FeatureQueue(config.queue_size, encoder_config.embed_dim)
        self.queue.fill_random(torch.Generator().manual_seed(queue_seed))


def make_pretrain_optimizer(model: ContrastiveModel) -> torch.optim.Optimizer:
    return torch.optim.SGD(model.encoder_q.parameters(), lr=model.config.lr, momentum=0.0)


def pretrain_step(
    model: ContrastiveModel,
    x_q: torch.Tensor,
    x_k: torch.Tensor,
    optimizer: torch.optim.Optimizer,
) -> float:
    """One stage-1 update; returns the InfoNCE loss before the update."""
    with trace_span("contrastive/pretrain_step", attributes={"facefill.batch": int(x_q.shape[0])}):
        z_q = encode(model.encoder_q, x_q)
        with torch.no_grad():
            z_k = encode(model.encoder_k, x_k)
        loss = info_nce_loss(z_q, z_k, model.queue, model.config.temperature)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        momentum_update(model.encoder_q, model.encoder_k, model.config.momentum)
        model.queue.enqueue(z_k)
    return float(loss.detach())
