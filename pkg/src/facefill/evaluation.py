"""Inference over image directories and the held-out evaluation report."""

from __future__ import annotations

import json
import logging
import math
import time
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from facefill.backbones import build_backbones
from facefill.checkpoint import JOINT_KIND, load_checkpoint, restore_module
from facefill.config import RunConfig, config_from_dict
from facefill.data import FaceDataset, UVField, apply_mask, iter_batches, read_image, write_image
from facefill.data.dataset import IMAGE_DIR, MASK_DIR
from facefill.data.uvio import write_uv_field
from facefill.errors import IngestionError, ShapeError
from facefill.generator import Generator
from facefill.metrics import (
    DEFAULT_FPRS,
    GaussianAccumulator,
    frechet_distance,
    psnr,
    roc_auc,
    ssim,
    verification_pairs,
)
from facefill.telemetry import generate_run_id, set_span_attributes, trace_span

logger = logging.getLogger("facefill.evaluation")


def load_generator(path: str | Path) -> tuple[Generator, RunConfig]:
    """Rebuild a trained generator (eval mode) and its run config from a joint checkpoint."""
    checkpoint = load_checkpoint(path)
    checkpoint.expect_kind(JOINT_KIND, path)
    config = config_from_dict(checkpoint.metadata.get("config") or {})
    generator = Generator(
        config.encoder,
        config.decoder,
        use_daf=config.ablation.use_daf,
        use_uv=config.ablation.use_uv,
    )
    restore_module(generator, checkpoint.namespace("generator"), source=str(path))
    generator.eval()
    return generator, config


def json_float(value: float | None) -> float | str | None:
    """Infinite values are written as "inf"/"-inf" strings."""
    if value is None or math.isfinite(value):
        return value
    return "inf" if value > 0 else "-inf"


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def _uv_mse(prediction: torch.Tensor, target: torch.Tensor, validity: torch.Tensor) -> float | None:
    weight = validity.expand_as(prediction)
    count = float(weight.sum())
    if count == 0.0:
        return None
    return float((((prediction - target) ** 2) * weight).sum()) / count


def evaluate_dataset(
    checkpoint: str | Path | Generator,
    dataset: FaceDataset,
    embedder: nn.Module | None = None,
    *,
    batch_size: int = 8,
    out: str | Path | None = None,
    workers: int | None = None,
) -> dict[str, Any]:
    """Complete every masked sample and score it against its target.

    Verification uses the unmasked targets as the gallery and the completed
    images as probes; the same protocol on the raw masked inputs is reported
    under ``masked_*`` as the baseline.
    """
    if isinstance(checkpoint, Generator):
        generator = checkpoint
        generator.eval()
        if embedder is None:
            raise ValueError("an embedder is required when evaluating an in-memory generator")
    else:
        generator, config = load_generator(checkpoint)
        if embedder is None:
            embedder = build_backbones(config.backbone).embedder
    run_id = generate_run_id()
    dtype = next(generator.parameters()).dtype

    rows: list[dict[str, Any]] = []
    real_stats: GaussianAccumulator | None = None
    fake_stats: GaussianAccumulator | None = None
    gallery: list[np.ndarray] = []
    probes: list[np.ndarray] = []
    masked_probes: list[np.ndarray] = []
    elapsed = 0.0
    span_attributes = {"facefill.count": len(dataset)}
    with trace_span("evaluation/evaluate_dataset", attributes=span_attributes) as span:
        for batch in iter_batches(
            dataset, range(len(dataset)), batch_size, workers=workers, dtype=dtype
        ):
            with torch.no_grad():
                started = time.perf_counter()
                outputs = generator(batch.x_q, batch.mask)
                elapsed += time.perf_counter() - started
                completed = outputs.full.image
                real_embeddings = embedder(batch.target)
                fake_embeddings = embedder(completed)
                masked_embeddings = embedder(batch.x_q)
            if real_stats is None or fake_stats is None:
                real_stats = GaussianAccumulator(real_embeddings.shape[1])
                fake_stats = GaussianAccumulator(real_embeddings.shape[1])
            real_stats.update(real_embeddings)
            fake_stats.update(fake_embeddings)
            gallery.extend(real_embeddings.numpy())
            probes.extend(fake_embeddings.numpy())
            masked_probes.extend(masked_embeddings.numpy())
            for i, name in enumerate(batch.names):
                row: dict[str, Any] = {
                    "name": name,
                    "psnr": psnr(completed[i], batch.target[i]),
                    "ssim": ssim(completed[i], batch.target[i]),
                    "masked_psnr": psnr(batch.x_q[i], batch.target[i]),
                }
                uv = outputs.full.uv
                if uv is not None and batch.uv is not None and batch.uv_valid is not None:
                    row["uv_mse"] = _uv_mse(uv[i], batch.uv[i], batch.uv_valid[i])
                rows.append(row)
        set_span_attributes(span, {"facefill.seconds": elapsed})

    count = len(rows)
    report: dict[str, Any] = {
        "run_id": run_id,
        "count": count,
        "psnr_mean": _mean([row["psnr"] for row in rows]),
        "ssim_mean": _mean([row["ssim"] for row in rows]),
        "masked_psnr_mean": _mean([row["masked_psnr"] for row in rows]),
        "frechet": None,
        "auc": None,
        "tpr_at_1pct": None,
        "tpr_at_0p1pct": None,
        "masked_auc": None,
        "masked_tpr_at_1pct": None,
        "masked_tpr_at_0p1pct": None,
        "inference_seconds_mean": elapsed / count if count else math.nan,
    }
    uv_errors = [row["uv_mse"] for row in rows if row.get("uv_mse") is not None]
    if uv_errors:
        report["uv_mse_mean"] = _mean(uv_errors)
    if real_stats is not None and fake_stats is not None:
        report["frechet"] = frechet_distance(real_stats.finalize(), fake_stats.finalize())
    if count >= 2:
        completed_roc = roc_auc(verification_pairs(gallery, probes), DEFAULT_FPRS)
        masked_roc = roc_auc(verification_pairs(gallery, masked_probes), DEFAULT_FPRS)
        report.update(
            auc=completed_roc.auc,
            tpr_at_1pct=completed_roc.tpr_at_fpr[0.01],
            tpr_at_0p1pct=completed_roc.tpr_at_fpr[0.001],
            masked_auc=masked_roc.auc,
            masked_tpr_at_1pct=masked_roc.tpr_at_fpr[0.01],
            masked_tpr_at_0p1pct=masked_roc.tpr_at_fpr[0.001],
        )
    else:
        logger.warning("Verification metrics need at least two images; got %d", count)
    report["rows"] = rows

    if out is not None:
        write_report(out, report)
    logger.info(
        "Evaluated %d images: psnr=%.3f ssim=%.4f",
        count,
        report["psnr_mean"],
        report["ssim_mean"],
        extra={"run_id": run_id},
    )
    return report


def write_report(path: str | Path, report: dict[str, Any]) -> Path:
    def encode(value: Any) -> Any:
        if isinstance(value, float):
            return json_float(value)
        if isinstance(value, dict):
            return {key: encode(item) for key, item in value.items()}
        if isinstance(value, list):
            return [encode(item) for item in value]
        return value

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(encode(report), indent=2, sort_keys=True) + "\n")
    return target


def _load_mask(mask_dir: Path, stem: str, image: np.ndarray) -> np.ndarray:
    """Mask file (nonzero = occluded) or, without one, pixels black in every channel."""
    path = mask_dir / f"{stem}.png"
    if path.is_file():
        mask = (read_image(path).max(axis=0, keepdims=True) > 0).astype(np.float32)
        if mask.shape[-2:] != image.shape[-2:]:
            raise IngestionError(path, f"mask shape {mask.shape[-2:]} != image {image.shape[-2:]}")
        return mask
    return (image.max(axis=0, keepdims=True) == 0).astype(np.float32)


def infer_directory(
    checkpoint: str | Path,
    input_dir: str | Path,
    out_dir: str | Path,
    *,
    emit_uv: bool = False,
    emit_alpha: bool = False,
    emit_scales: bool = False,
) -> list[Path]:
    """Complete ``input_dir/images/*.png`` and write results into ``out_dir``."""
    generator, config = load_generator(checkpoint)
    root = Path(input_dir)
    image_dir = root / IMAGE_DIR
    if not image_dir.is_dir():
        raise IngestionError(image_dir, "missing directory")
    files = sorted(image_dir.glob("*.png"))
    if not files:
        raise IngestionError(image_dir, "no *.png images found")
    destination = Path(out_dir)
    dtype = next(generator.parameters()).dtype
    written: list[Path] = []
    for path in files:
        image = read_image(path)
        if tuple(image.shape[-2:]) != tuple(config.data.image_size):
            raise ShapeError(
                f"{path}: image is {image.shape[-2]}x{image.shape[-1]}, model expects "
                f"{config.data.image_size[0]}x{config.data.image_size[1]}"
            )
        mask = _load_mask(root / MASK_DIR, path.stem, image)
        x_q = torch.from_numpy(apply_mask(image, mask))[None].to(dtype)
        with torch.no_grad():
            outputs = generator(x_q, torch.from_numpy(mask)[None].to(dtype))
        full = outputs.full
        written.append(write_image(destination / f"{path.stem}.png", full.image[0].numpy()))
        if emit_uv and full.uv is not None:
            uv = full.uv[0].numpy().astype(np.float32)
            field = UVField(u=uv[0], v=uv[1], validity=np.ones(uv.shape[1:], dtype=np.uint8))
            written.append(write_uv_field(destination / f"{path.stem}.uvf", field))
        if emit_alpha and full.alpha is not None:
            alpha = full.alpha[0].mean(dim=0, keepdim=True).numpy()
            written.append(write_image(destination / f"{path.stem}_alpha.png", alpha))
        if emit_scales:
            for k in outputs:
                scaled = outputs[k].image[0].numpy()
                written.append(write_image(destination / f"{path.stem}_scale{k}.png", scaled))
    logger.info("Completed %d images into %s", len(files), destination)
    return written
