"""Two-stage training loops, checkpointing and the experiment drivers."""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import math
import os
import time
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from facefill.backbones import Backbones, build_backbones
from facefill.checkpoint import (
    JOINT_KIND,
    PRETRAIN_KIND,
    Checkpoint,
    load_checkpoint,
    module_arrays,
    optimizer_arrays,
    restore_module,
    restore_optimizer,
    save_checkpoint,
)
from facefill.config import AblationFlags, RunConfig, Stage, config_to_dict
from facefill.contrastive import ContrastiveModel, make_pretrain_optimizer, pretrain_step
from facefill.data import (
    FaceDataset,
    SyntheticFaceDataset,
    derive_seed,
    load_batch,
    load_dataset,
)
from facefill.data.dataset import DEFAULT_WORKERS
from facefill.errors import ConfigError, StateError
from facefill.evaluation import evaluate_dataset, write_report
from facefill.generator import Generator, encoder_from_pretrain
from facefill.losses import Targets, total_loss
from facefill.telemetry import generate_run_id, set_span_attributes, trace_span

logger = logging.getLogger("facefill.trainer")

DETERMINISTIC = os.environ.get("FACEFILL_DETERMINISTIC", "").strip().lower() in {
    "1",
    "true",
    "yes",
}
PLATEAU_WINDOW = 50
PLATEAU_MIN_IMPROVEMENT = 0.005
UV_SWEEP_WEIGHTS = (0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0)
# Record fields that differ between otherwise identical runs.
NONDETERMINISTIC_FIELDS = frozenset({"wall_time"})

# Seed streams derived from RunConfig.seed.
_QUEUE_STREAM = 2
_EVAL_STREAM = 99


class TrainingLog:
    """Append-only per-step records, mirrored to a JSON-lines file when ``path`` is set."""

    def __init__(self, path: str | Path | None = None, *, append: bool = False) -> None:
        self.path = Path(path) if path is not None else None
        self.records: list[dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append:
                self.path.write_text("", encoding="utf-8")

    def append(self, record: dict[str, Any]) -> None:
        step = int(record["step"])
        stage = record.get("stage")
        previous = [r for r in self.records if r.get("stage") == stage]
        if previous and step <= int(previous[-1]["step"]):
            raise StateError(
                f"log step {step} does not advance past {previous[-1]['step']} for {stage}"
            )
        self.records.append(dict(record))
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    def stage_records(self, stage: str) -> list[dict[str, Any]]:
        return [record for record in self.records if record.get("stage") == stage]

    @classmethod
    def read(cls, path: str | Path) -> list[dict[str, Any]]:
        with Path(path).open(encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]


def comparable(records: Sequence[dict[str, Any]]) -> list[dict[str, Any]]:
    """Strip wall-clock fields so two runs' logs can be compared exactly."""
    return [
        {key: value for key, value in record.items() if key not in NONDETERMINISTIC_FIELDS}
        for record in records
    ]


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    if DETERMINISTIC:
        torch.use_deterministic_algorithms(True)


def plateaued(losses: Sequence[float], window: int = PLATEAU_WINDOW) -> bool:
    """True when the latest window's mean improved on the previous one by < 0.5%."""
    if len(losses) < 2 * window:
        return False
    previous = float(np.mean(losses[-2 * window : -window]))
    current = float(np.mean(losses[-window:]))
    if previous <= 0:
        return True
    return (previous - current) / abs(previous) < PLATEAU_MIN_IMPROVEMENT


def step_items(step: int, batch_size: int, size: int, seed: int) -> list[tuple[int, int]]:
    """(index, epoch) pairs for 1-based ``step``; each epoch is a seeded permutation."""
    items = []
    for position in range((step - 1) * batch_size, step * batch_size):
        epoch, offset = divmod(position, size)
        order = np.random.default_rng([seed, epoch]).permutation(size)
        items.append((int(order[offset]), epoch))
    return items


def build_train_dataset(config: RunConfig) -> FaceDataset:
    data = config.data
    if data.root is None:
        return SyntheticFaceDataset(
            data.synthetic_count,
            data.image_size,
            config.seed,
            coverage_range=data.mask_coverage,
        )
    return load_dataset(
        data.root, data.train_split, shuffle_seed=config.seed, coverage_range=data.mask_coverage
    )


def build_eval_dataset(config: RunConfig) -> FaceDataset:
    """Held-out faces: a disjoint seed stream, or the eval split on disk."""
    data = config.data
    if data.root is None:
        return SyntheticFaceDataset(
            data.eval_count,
            data.image_size,
            derive_seed(config.seed, _EVAL_STREAM),
            coverage_range=data.mask_coverage,
        )
    return load_dataset(
        data.root,
        data.eval_split,
        shuffle_seed=None,
        mask_seed=config.seed,
        coverage_range=data.mask_coverage,
    )


@contextmanager
def _prefetch_pool(workers: int | None) -> Iterator[ThreadPoolExecutor | None]:
    count = DEFAULT_WORKERS if workers is None else workers
    if count <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=count) as pool:
        yield pool


def _checkpoint_path(config: RunConfig, kind: str, step: int | None = None) -> Path:
    if step is None:
        return config.output_path / f"{kind}.ckpt"
    return config.output_path / f"{kind}-step{step:06d}.ckpt"


# -- stage 1 ----------------------------------------------------------------


def build_contrastive_model(config: RunConfig) -> ContrastiveModel:
    seed_everything(config.seed)
    return ContrastiveModel(
        config.encoder,
        config.contrastive,
        queue_seed=derive_seed(config.seed, _QUEUE_STREAM),
    )


def save_pretrain_checkpoint(
    path: str | Path,
    model: ContrastiveModel,
    optimizer: torch.optim.Optimizer,
    config: RunConfig,
    step: int,
) -> Path:
    opt_arrays, opt_meta = optimizer_arrays("optimizer", optimizer)
    arrays = {
        **module_arrays("encoder_q", model.encoder_q),
        **module_arrays("encoder_k", model.encoder_k),
        **{f"queue/{name}": value for name, value in model.queue.state_arrays().items()},
        **opt_arrays,
    }
    metadata = {"config": config_to_dict(config), "optimizer": opt_meta}
    return save_checkpoint(path, arrays, kind=PRETRAIN_KIND, step=step, metadata=metadata)


def restore_pretrain_state(
    checkpoint: Checkpoint,
    model: ContrastiveModel,
    optimizer: torch.optim.Optimizer,
    source: str,
) -> int:
    checkpoint.expect_kind(PRETRAIN_KIND, source)
    restore_module(model.encoder_q, checkpoint.namespace("encoder_q"), source=source)
    restore_module(model.encoder_k, checkpoint.namespace("encoder_k"), source=source)
    model.queue.load_state_arrays(checkpoint.namespace("queue"))
    restore_optimizer(
        optimizer, checkpoint.namespace("optimizer"), checkpoint.metadata.get("optimizer", {})
    )
    return checkpoint.step


def run_pretrain(
    config: RunConfig,
    *,
    resume: str | Path | None = None,
    log: TrainingLog | None = None,
) -> Path:
    """Contrastive pretraining for ``config.pretrain_steps``; returns the final checkpoint."""
    run_id = generate_run_id()
    if log is None:
        log = TrainingLog(config.output_path / "pretrain.jsonl", append=resume is not None)
    model = build_contrastive_model(config)
    optimizer = make_pretrain_optimizer(model)
    start = 0
    if resume is not None:
        start = restore_pretrain_state(load_checkpoint(resume), model, optimizer, str(resume))
        logger.info("Resuming pretraining from step %d", start, extra={"run_id": run_id})
    dataset = build_train_dataset(config)
    losses: list[float] = []
    step = start
    with _prefetch_pool(config.data.workers) as pool:
        for step in range(start + 1, config.pretrain_steps + 1):
            started = time.perf_counter()
            items = step_items(step, config.batch_size, len(dataset), config.seed)
            batch = load_batch(dataset, items, pool=pool)
            loss = pretrain_step(model, batch.x_q, batch.x_k, optimizer)
            losses.append(loss)
            log.append(
                {
                    "stage": str(Stage.PRETRAIN),
                    "step": step,
                    "loss": loss,
                    "lr": optimizer.param_groups[0]["lr"],
                    "wall_time": time.perf_counter() - started,
                }
            )
            logger.debug(
                "pretrain step %d loss=%.6f",
                step,
                loss,
                extra={"run_id": run_id, "stage": "pretrain", "step": step},
            )
            if step % config.checkpoint_every == 0:
                save_pretrain_checkpoint(
                    _checkpoint_path(config, PRETRAIN_KIND, step),
                    model,
                    optimizer,
                    config,
                    step,
                )
            if config.plateau_stop and plateaued(losses):
                logger.info("Pretraining loss plateaued at step %d", step)
                break
    final = save_pretrain_checkpoint(
        _checkpoint_path(config, PRETRAIN_KIND), model, optimizer, config, step
    )
    logger.info("Pretraining finished at step %d: %s", step, final, extra={"run_id": run_id})
    return final


# -- stage 2 ----------------------------------------------------------------


def build_generator(config: RunConfig) -> Generator:
    seed_everything(config.seed)
    return Generator(
        config.encoder,
        config.decoder,
        use_daf=config.ablation.use_daf,
        use_uv=config.ablation.use_uv,
    )


def save_joint_checkpoint(
    path: str | Path,
    generator: Generator,
    optimizer: torch.optim.Optimizer,
    config: RunConfig,
    step: int,
) -> Path:
    opt_arrays, opt_meta = optimizer_arrays("optimizer", optimizer)
    arrays = {**module_arrays("generator", generator), **opt_arrays}
    metadata = {"config": config_to_dict(config), "optimizer": opt_meta}
    return save_checkpoint(path, arrays, kind=JOINT_KIND, step=step, metadata=metadata)


@dataclass
class JointResult:
    checkpoint: Path
    generator: Generator
    backbones: Backbones
    records: list[dict[str, Any]] = field(default_factory=list)


def run_joint(
    config: RunConfig,
    pretrain_ckpt: str | Path | None = None,
    *,
    resume: str | Path | None = None,
    log: TrainingLog | None = None,
) -> JointResult:
    """Joint training of encoder, decoder, fusion and UV heads for ``config.joint_steps``."""
    run_id = generate_run_id()
    if log is None:
        log = TrainingLog(config.output_path / "joint.jsonl", append=resume is not None)
    generator = build_generator(config)
    source = pretrain_ckpt if pretrain_ckpt is not None else config.pretrain_checkpoint
    if config.ablation.use_contrastive_init and resume is None:
        if source is None:
            raise ConfigError(
                "joint training with use_contrastive_init needs a pretrain checkpoint"
            )
        checkpoint = load_checkpoint(source)
        checkpoint.expect_kind(PRETRAIN_KIND, source)
        encoder_from_pretrain(checkpoint, generator)
    backbones = build_backbones(config.backbone)
    weights = config.effective_loss()
    optimizer = torch.optim.Adam(generator.parameters(), lr=config.joint_lr)
    start = 0
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        checkpoint.expect_kind(JOINT_KIND, resume)
        restore_module(generator, checkpoint.namespace("generator"), source=str(resume))
        restore_optimizer(
            optimizer, checkpoint.namespace("optimizer"), checkpoint.metadata.get("optimizer", {})
        )
        start = checkpoint.step
        logger.info("Resuming joint training from step %d", start, extra={"run_id": run_id})

    dataset = build_train_dataset(config)
    generator.train()
    losses: list[float] = []
    step = start
    with _prefetch_pool(config.data.workers) as pool:
        for step in range(start + 1, config.joint_steps + 1):
            started = time.perf_counter()
            items = step_items(step, config.batch_size, len(dataset), config.seed)
            batch = load_batch(dataset, items, pool=pool)
            with trace_span("trainer/joint_step", attributes={"facefill.step": step}) as span:
                outputs = generator(batch.x_q, batch.mask)
                breakdown = total_loss(
                    outputs,
                    Targets(image=batch.target, uv=batch.uv, uv_valid=batch.uv_valid),
                    weights,
                    backbones.extractor,
                    backbones.embedder,
                )
                optimizer.zero_grad(set_to_none=True)
                breakdown.total.backward()
                optimizer.step()
                set_span_attributes(span, {"facefill.total": breakdown.terms["total"]})
            losses.append(breakdown.terms["total"])
            log.append(
                {
                    "stage": str(Stage.JOINT),
                    "step": step,
                    **breakdown.as_record(),
                    "lr": optimizer.param_groups[0]["lr"],
                    "wall_time": time.perf_counter() - started,
                }
            )
            logger.debug(
                "joint step %d total=%.6f",
                step,
                breakdown.terms["total"],
                extra={"run_id": run_id, "stage": "joint", "step": step},
            )
            if step % config.checkpoint_every == 0:
                save_joint_checkpoint(
                    _checkpoint_path(config, JOINT_KIND, step),
                    generator,
                    optimizer,
                    config,
                    step,
                )
            if config.plateau_stop and plateaued(losses):
                logger.info("Joint loss plateaued at step %d", step)
                break
    final = save_joint_checkpoint(
        _checkpoint_path(config, JOINT_KIND), generator, optimizer, config, step
    )
    generator.eval()
    logger.info("Joint training finished at step %d: %s", step, final, extra={"run_id": run_id})
    return JointResult(
        checkpoint=final,
        generator=generator,
        backbones=backbones,
        records=log.stage_records(str(Stage.JOINT)),
    )


def run_stage(config: RunConfig, *, resume: str | Path | None = None) -> Path:
    """Run the stage named by ``config.stage``; returns its final checkpoint."""
    logger.info("Running %s stage into %s", config.stage, config.output_path)
    if config.stage is Stage.PRETRAIN:
        return run_pretrain(config, resume=resume)
    return run_joint(config, resume=resume).checkpoint


# -- experiments ------------------------------------------------------------


def smoke_config(seed: int, output_dir: str | Path) -> RunConfig:
    """64 synthetic 128x128 faces, 100 pretraining and 200 joint steps."""
    return RunConfig(seed=seed, output_dir=str(output_dir))


def run_smoke_experiment(seed: int, config: RunConfig | None = None) -> dict[str, Any]:
    """Pretrain, joint-train and evaluate on synthetic faces; report the acceptance checks."""
    config = config if config is not None else smoke_config(seed, f"runs/smoke-{seed}")
    config = dataclasses.replace(config, seed=seed)
    pretrain = run_pretrain(config) if config.ablation.use_contrastive_init else None
    result = run_joint(config, pretrain)
    records = result.records
    if not records:
        raise StateError(
            f"smoke run in {config.output_path} logged no joint steps "
            f"(joint_steps={config.joint_steps})"
        )
    first, last = records[0], records[-1]
    evaluation = evaluate_dataset(
        result.generator,
        build_eval_dataset(config),
        result.backbones.embedder,
        batch_size=config.batch_size,
        out=config.output_path / "smoke_eval.json",
    )
    psnr_gain = evaluation["psnr_mean"] - evaluation["masked_psnr_mean"]
    report = {
        "seed": seed,
        "steps": last["step"],
        "total_first": first["total"],
        "total_last": last["total"],
        "uv_first": first.get("uv_1", math.nan),
        "uv_last": last.get("uv_1", math.nan),
        "psnr_mean": evaluation["psnr_mean"],
        "masked_psnr_mean": evaluation["masked_psnr_mean"],
        "psnr_gain": psnr_gain,
        "criteria": {
            "loss_reduced": last["total"] <= 0.7 * first["total"],
            "psnr_gain": bool(psnr_gain >= 3.0),
            "uv_improved": last.get("uv_1", math.nan) < first.get("uv_1", math.nan),
        },
    }
    write_report(config.output_path / "smoke_report.json", report)
    logger.info("Smoke experiment criteria: %s", report["criteria"])
    return report


def ablation_variants() -> list[tuple[bool, bool, bool]]:
    return list(itertools.product((False, True), repeat=3))


def run_ablation_grid(config: RunConfig, steps: int = 20) -> dict[str, dict[str, Any]]:
    """Train every {contrastive init, fusion, UV} combination for ``steps`` joint steps."""
    root = config.output_path
    pretrain: Path | None = None
    results: dict[str, dict[str, Any]] = {}
    for use_cl, use_daf, use_uv in ablation_variants():
        flags = AblationFlags(use_contrastive_init=use_cl, use_daf=use_daf, use_uv=use_uv)
        if use_cl and pretrain is None:
            pretrain = run_pretrain(dataclasses.replace(config, output_dir=str(root / "pretrain")))
        variant = dataclasses.replace(
            config,
            ablation=flags,
            joint_steps=steps,
            output_dir=str(root / flags.label),
        )
        result = run_joint(variant, pretrain if use_cl else None)
        results[flags.label] = comparable(result.records)[-1]
        logger.info("Ablation %s final total=%.6f", flags.label, results[flags.label]["total"])
    write_report(root / "ablation_report.json", results)
    return results


def run_uv_weight_sweep(
    config: RunConfig,
    weights: Sequence[float] = UV_SWEEP_WEIGHTS,
    pretrain_ckpt: str | Path | None = None,
) -> list[dict[str, Any]]:
    """One joint model per UV loss weight, each evaluated on the held-out set."""
    root = config.output_path
    pretrain = pretrain_ckpt
    if config.ablation.use_contrastive_init and pretrain is None:
        pretrain = config.pretrain_checkpoint or run_pretrain(
            dataclasses.replace(config, output_dir=str(root / "pretrain"))
        )
    eval_dataset = build_eval_dataset(config)
    rows = []
    for weight in weights:
        variant = dataclasses.replace(
            config,
            loss=dataclasses.replace(config.loss, uv=float(weight)),
            output_dir=str(root / f"uv-{weight:g}"),
        )
        result = run_joint(variant, pretrain)
        evaluation = evaluate_dataset(
            result.generator,
            eval_dataset,
            result.backbones.embedder,
            batch_size=config.batch_size,
        )
        final = result.records[-1] if result.records else {}
        rows.append(
            {
                "uv_weight": float(weight),
                "total": final.get("total", math.nan),
                "uv_1": final.get("uv_1", math.nan),
                "psnr_mean": evaluation["psnr_mean"],
                "ssim_mean": evaluation["ssim_mean"],
                "frechet": evaluation["frechet"],
                "uv_mse_mean": evaluation.get("uv_mse_mean"),
            }
        )
        logger.info("UV weight %g: psnr=%.3f", weight, evaluation["psnr_mean"])
    write_report(root / "uv_sweep_report.json", {"rows": rows})
    return rows
