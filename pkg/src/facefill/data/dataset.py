"""Masked samples, contrastive views and dataset ingestion.

Every sample is a pure function of (dataset seed, index, epoch), so samples
can be built on any thread and iteration order never depends on completion
order.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

from facefill.data.masks import MaskKind, random_mask_spec, synthesize_mask
from facefill.data.synthetic import UVField, generate_synthetic_face
from facefill.data.uvio import UV_SUFFIXES, read_uv_field, write_uv_field
from facefill.errors import ConfigError, IngestionError, ShapeError

logger = logging.getLogger("facefill.dataset")

DEFAULT_WORKERS = int(os.environ.get("FACEFILL_WORKERS", "2"))
IMAGE_DIR = "images"
UV_DIR = "uv"
MASK_DIR = "masks"


def derive_seed(*parts: int) -> int:
    """Mix integers into one 63-bit seed (stable across platforms and runs)."""
    state = np.random.SeedSequence([int(part) for part in parts]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


@dataclass(frozen=True)
class MaskedSample:
    """One training record; ``x_q`` and ``x_k`` share ``target`` under distinct masks."""

    x_q: np.ndarray
    x_k: np.ndarray
    mask: np.ndarray
    mask_k: np.ndarray
    target: np.ndarray
    uv_gt: UVField | None = None
    name: str = ""


@dataclass(frozen=True)
class ContrastiveViews:
    x_q: np.ndarray
    x_k: np.ndarray
    mask_q: np.ndarray
    mask_k: np.ndarray


def apply_mask(target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the occluded pixels: target * (1 - mask)."""
    if target.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} is not aligned with image {target.shape}")
    return (target * (1.0 - mask)).astype(np.float32)


def make_contrastive_views(
    target: np.ndarray,
    rng_seed: int,
    *,
    kinds: tuple[MaskKind, ...] = tuple(MaskKind),
    coverage_range: tuple[float, float] = (0.1, 0.5),
) -> ContrastiveViews:
    """Occlude ``target`` with two independently drawn masks."""
    h, w = target.shape[-2:]
    rng = np.random.default_rng(rng_seed)
    spec_q = random_mask_spec(rng, kinds, coverage_range)
    spec_k = random_mask_spec(rng, kinds, coverage_range)
    mask_q = synthesize_mask(spec_q, h, w)
    mask_k = synthesize_mask(spec_k, h, w)
    return ContrastiveViews(
        x_q=apply_mask(target, mask_q),
        x_k=apply_mask(target, mask_k),
        mask_q=mask_q,
        mask_k=mask_k,
    )


def make_contrastive_pair(target: np.ndarray, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Positive pair (x_q, x_k) for the Siamese encoders."""
    views = make_contrastive_views(target, rng_seed)
    return views.x_q, views.x_k


def read_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG as float32 [3, H, W] in [0, 1]."""
    source = Path(path)
    try:
        with Image.open(source) as handle:
            pixels = np.asarray(handle.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(source, f"unreadable image ({exc})") from exc
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def write_image(path: str | Path, array: np.ndarray) -> Path:
    """Write [C, H, W] values in [0, 1] as an 8-bit PNG (C = 1 → grayscale)."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.clip(np.rint(np.asarray(array) * 255.0), 0, 255).astype(np.uint8)
    if pixels.shape[0] == 1:
        Image.fromarray(pixels[0], mode="L").save(target)
    else:
        Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(target)
    return target


class SyntheticFaceDataset(Dataset[MaskedSample]):
    """Seeded synthetic heads with analytic UV ground truth."""

    def __init__(
        self,
        count: int,
        size: tuple[int, int],
        seed: int,
        *,
        kinds: tuple[MaskKind, ...] = tuple(MaskKind),
        coverage_range: tuple[float, float] = (0.1, 0.5),
    ) -> None:
        if count < 1:
            raise ConfigError(f"synthetic dataset needs at least one sample, got {count}")
        self.count = count
        self.size = size
        self.seed = seed
        self.kinds = kinds
        self.coverage_range = coverage_range

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> MaskedSample:
        return self.sample(index)

    def __iter__(self) -> Iterator[MaskedSample]:
        for index in range(self.count):
            yield self.sample(index)

    def face_seed(self, index: int) -> int:
        return derive_seed(self.seed, index)

    def sample(self, index: int, epoch: int = 0) -> MaskedSample:
        if not 0 <= index < self.count:
            raise IndexError(index)
        h, w = self.size
        target, uv = generate_synthetic_face(self.face_seed(index), h, w)
        views = make_contrastive_views(
            target,
            derive_seed(self.seed, index, epoch, 1),
            kinds=self.kinds,
            coverage_range=self.coverage_range,
        )
        return MaskedSample(
            x_q=views.x_q,
            x_k=views.x_k,
            mask=views.mask_q,
            mask_k=views.mask_k,
            target=target,
            uv_gt=uv,
            name=f"synthetic-{self.seed}-{index:05d}",
        )


class ImageFolderDataset(Dataset[MaskedSample]):
    """``<root>/<split>/images/*.png`` with optional ``<root>/<split>/uv/<stem>.uvf``."""

    def __init__(
        self,
        root: str | Path,
        split: str,
        *,
        shuffle_seed: int | None = 0,
        mask_seed: int = 0,
        kinds: tuple[MaskKind, ...] = tuple(MaskKind),
        coverage_range: tuple[float, float] = (0.1, 0.5),
    ) -> None:
        self.root = Path(root) / split
        image_dir = self.root / IMAGE_DIR
        if not image_dir.is_dir():
            raise IngestionError(image_dir, "missing directory")
        files = sorted(image_dir.glob("*.png"))
        if not files:
            raise IngestionError(image_dir, "no *.png images found")
        if shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(len(files))
            files = [files[int(i)] for i in order]
        self.files = files
        self.mask_seed = mask_seed
        self.kinds = kinds
        self.coverage_range = coverage_range

    def __len__(self) -> int:
        return len(self.files)

    def __getitem__(self, index: int) -> MaskedSample:
        return self.sample(index)

    def __iter__(self) -> Iterator[MaskedSample]:
        for index in range(len(self.files)):
            yield self.sample(index)

    def _uv_path(self, image_path: Path) -> Path | None:
        for suffix in UV_SUFFIXES:
            candidate = self.root / UV_DIR / f"{image_path.stem}{suffix}"
            if candidate.is_file():
                return candidate
        return None

    def sample(self, index: int, epoch: int = 0) -> MaskedSample:
        path = self.files[index]
        target = read_image(path)
        uv: UVField | None = None
        uv_path = self._uv_path(path)
        if uv_path is not None:
            uv = read_uv_field(uv_path)
            if uv.shape != tuple(target.shape[-2:]):
                raise IngestionError(
                    uv_path,
                    f"UV shape {uv.shape} does not match image shape {tuple(target.shape[-2:])}",
                )
        views = make_contrastive_views(
            target,
            derive_seed(self.mask_seed, index, epoch, 1),
            kinds=self.kinds,
            coverage_range=self.coverage_range,
        )
        return MaskedSample(
            x_q=views.x_q,
            x_k=views.x_k,
            mask=views.mask_q,
            mask_k=views.mask_k,
            target=target,
            uv_gt=uv,
            name=path.stem,
        )


FaceDataset = SyntheticFaceDataset | ImageFolderDataset


def load_dataset(
    root_path: str | Path,
    split: str,
    *,
    shuffle_seed: int | None = 0,
    mask_seed: int = 0,
    coverage_range: tuple[float, float] = (0.1, 0.5),
) -> ImageFolderDataset:
    """Open an image directory; iteration order is fixed by ``shuffle_seed``."""
    return ImageFolderDataset(
        root_path,
        split,
        shuffle_seed=shuffle_seed,
        mask_seed=mask_seed,
        coverage_range=coverage_range,
    )


@dataclass(frozen=True)
class Batch:
    """Stacked tensors for a list of samples."""

    x_q: torch.Tensor
    x_k: torch.Tensor
    mask: torch.Tensor
    mask_k: torch.Tensor
    target: torch.Tensor
    uv: torch.Tensor | None
    uv_valid: torch.Tensor | None
    names: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.target.shape[0])


def collate(samples: Sequence[MaskedSample], dtype: torch.dtype = torch.float32) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")

    def stack(arrays: Sequence[np.ndarray]) -> torch.Tensor:
        return torch.from_numpy(np.stack(arrays)).to(dtype)

    uv: torch.Tensor | None = None
    uv_valid: torch.Tensor | None = None
    fields = [sample.uv_gt for sample in samples]
    if all(field is not None for field in fields):
        uv = stack([field.stacked() for field in fields if field is not None])
        uv_valid = stack(
            [field.validity[None].astype(np.float32) for field in fields if field is not None]
        )
    elif any(field is not None for field in fields):
        logger.debug("Dropping UV supervision for a batch with partial UV coverage")
    return Batch(
        x_q=stack([sample.x_q for sample in samples]),
        x_k=stack([sample.x_k for sample in samples]),
        mask=stack([sample.mask for sample in samples]),
        mask_k=stack([sample.mask_k for sample in samples]),
        target=stack([sample.target for sample in samples]),
        uv=uv,
        uv_valid=uv_valid,
        names=tuple(sample.name for sample in samples),
    )


def load_batch(
    dataset: FaceDataset,
    items: Sequence[tuple[int, int]],
    *,
    pool: ThreadPoolExecutor | None = None,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    """Build and collate the samples for (index, epoch) ``items`` in order."""
    if pool is None:
        samples = [dataset.sample(index, epoch) for index, epoch in items]
    else:
        # map() yields in submission order, whatever order the threads finish in.
        samples = list(pool.map(lambda item: dataset.sample(*item), items))
    return collate(samples, dtype)


def iter_batches(
    dataset: FaceDataset,
    indices: Sequence[int],
    batch_size: int,
    *,
    epoch: int = 0,
    workers: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> Iterator[Batch]:
    """Yield batches in ``indices`` order, building samples on a thread pool."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    worker_count = DEFAULT_WORKERS if workers is None else workers
    chunks = [
        [(int(index), epoch) for index in indices[i : i + batch_size]]
        for i in range(0, len(indices), batch_size)
    ]
    if worker_count <= 1:
        for chunk in chunks:
            yield load_batch(dataset, chunk, dtype=dtype)
        return
    with ThreadPoolExecutor(max_workers=worker_count) as pool:
        for chunk in chunks:
            yield load_batch(dataset, chunk, pool=pool, dtype=dtype)


def write_synthetic_dataset(
    out: str | Path,
    count: int,
    size: tuple[int, int],
    seed: int,
    *,
    split: str = "train",
) -> Path:
    """Materialize ``count`` synthetic faces as PNG + UVF1 under ``out/split``."""
    root = Path(out) / split
    dataset = SyntheticFaceDataset(count, size, seed)
    h, w = size
    for index in range(count):
        image, uv = generate_synthetic_face(dataset.face_seed(index), h, w)
        write_image(root / IMAGE_DIR / f"{index:05d}.png", image)
        write_uv_field(root / UV_DIR / f"{index:05d}.uvf", uv)
    logger.info("Wrote %d synthetic faces to %s", count, root)
    return root
