"""Command-line entry point: ``facefill <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from collections.abc import Callable, Sequence
from typing import Any

from facefill.config import RunConfig, Stage, apply_overrides, load_config, write_config

logger = logging.getLogger("facefill.cli")

Handler = Callable[[argparse.Namespace], Any]


def _configure_logging() -> None:
    level = os.environ.get("FACEFILL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def _run_config(args: argparse.Namespace, stage: Stage | None = None) -> RunConfig:
    config = apply_overrides(load_config(args.config), args.overrides)
    if stage is not None:
        config = dataclasses.replace(config, stage=stage)
    if getattr(args, "output_dir", None):
        config = dataclasses.replace(config, output_dir=args.output_dir)
    return config


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _cmd_pretrain(args: argparse.Namespace) -> None:
    from facefill.trainer import run_stage

    config = _run_config(args, Stage.PRETRAIN)
    write_config(config, config.output_path / "config.json")
    _emit({"checkpoint": run_stage(config, resume=args.resume)})


def _cmd_train(args: argparse.Namespace) -> None:
    from facefill.trainer import run_joint

    config = _run_config(args, Stage.JOINT)
    if args.pretrain_checkpoint:
        config = dataclasses.replace(config, pretrain_checkpoint=args.pretrain_checkpoint)
    write_config(config, config.output_path / "config.json")
    result = run_joint(config, resume=args.resume)
    final = result.records[-1] if result.records else {}
    _emit({"checkpoint": result.checkpoint, "step": final.get("step"), "total": final.get("total")})


def _cmd_run(args: argparse.Namespace) -> None:
    from facefill.trainer import run_stage

    config = _run_config(args)
    _emit({"stage": str(config.stage), "checkpoint": run_stage(config, resume=args.resume)})


def _cmd_infer(args: argparse.Namespace) -> None:
    from facefill.evaluation import infer_directory

    written = infer_directory(
        args.checkpoint,
        args.input,
        args.out,
        emit_uv=args.emit_uv,
        emit_alpha=args.emit_alpha,
        emit_scales=args.emit_scales,
    )
    _emit({"written": len(written), "out": args.out})


def _cmd_evaluate(args: argparse.Namespace) -> None:
    from facefill.data import load_dataset
    from facefill.evaluation import evaluate_dataset, load_generator
    from facefill.trainer import build_eval_dataset

    _generator, config = load_generator(args.checkpoint)
    if args.data is None:
        dataset = build_eval_dataset(config)
    else:
        dataset = load_dataset(
            args.data,
            args.split,
            shuffle_seed=None,
            mask_seed=config.seed,
            coverage_range=config.data.mask_coverage,
        )
    report = evaluate_dataset(args.checkpoint, dataset, batch_size=args.batch_size, out=args.out)
    summary = {key: value for key, value in report.items() if key != "rows"}
    _emit({**summary, "report": args.out})


def _cmd_gen_synthetic(args: argparse.Namespace) -> None:
    from facefill.data import write_synthetic_dataset

    root = write_synthetic_dataset(
        args.out, args.count, (args.size[0], args.size[1]), args.seed, split=args.split
    )
    _emit({"root": root, "count": args.count})


def _cmd_smoke(args: argparse.Namespace) -> None:
    from facefill.trainer import run_smoke_experiment

    config = apply_overrides(load_config(args.config), args.overrides)
    out = args.output_dir or f"runs/smoke-{args.seed}"
    config = dataclasses.replace(config, output_dir=out)
    report = run_smoke_experiment(args.seed, config)
    _emit(report)
    if not all(report["criteria"].values()):
        failed = [name for name, ok in report["criteria"].items() if not ok]
        logger.warning("Smoke criteria not met: %s", ", ".join(failed))


def _cmd_ablate(args: argparse.Namespace) -> None:
    from facefill.trainer import run_ablation_grid

    results = run_ablation_grid(_run_config(args), steps=args.steps)
    _emit({label: record.get("total") for label, record in results.items()})


def _cmd_uv_sweep(args: argparse.Namespace) -> None:
    from facefill.trainer import UV_SWEEP_WEIGHTS, run_uv_weight_sweep

    weights = tuple(args.weights) if args.weights else UV_SWEEP_WEIGHTS
    rows = run_uv_weight_sweep(_run_config(args), weights, args.pretrain_checkpoint)
    _emit(rows)


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config (keys mirror RunConfig)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key, e.g. --set loss.uv=0.5 (repeatable)",
    )
    parser.add_argument("--output-dir", help="shortcut for --set output_dir=...")


def build_parser() -> argparse.ArgumentParser:
    from facefill import __version__

    parser = argparse.ArgumentParser(
        prog="facefill", description="Occluded face completion: training, inference, evaluation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    pretrain = commands.add_parser("pretrain", help="contrastive encoder pretraining")
    _add_config_options(pretrain)
    pretrain.add_argument("--resume", help="pretrain checkpoint to continue from")
    pretrain.set_defaults(handler=_cmd_pretrain)

    train = commands.add_parser("train", help="joint completion training")
    _add_config_options(train)
    train.add_argument("--pretrain-checkpoint", help="encoder initialization checkpoint")
    train.add_argument("--resume", help="joint checkpoint to continue from")
    train.set_defaults(handler=_cmd_train)

    run = commands.add_parser("run", help="run the stage named by the config's stage key")
    _add_config_options(run)
    run.add_argument("--resume", help="checkpoint of that stage to continue from")
    run.set_defaults(handler=_cmd_run)

    infer = commands.add_parser("infer", help="complete a directory of masked images")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--input", required=True, help="directory containing images/*.png")
    infer.add_argument("--out", required=True)
    infer.add_argument("--emit-uv", action="store_true")
    infer.add_argument("--emit-alpha", action="store_true")
    infer.add_argument("--emit-scales", action="store_true")
    infer.set_defaults(handler=_cmd_infer)

    evaluate = commands.add_parser("evaluate", help="score a checkpoint on held-out faces")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", help="dataset root; default is the held-out synthetic set")
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--out", default="report.json")
    evaluate.add_argument("--batch-size", type=int, default=8)
    evaluate.set_defaults(handler=_cmd_evaluate)

    synth = commands.add_parser("gen-synthetic", help="write a synthetic face dataset")
    synth.add_argument("--count", type=int, required=True)
    synth.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=(128, 128))
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--split", default="train")
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=_cmd_gen_synthetic)

    smoke = commands.add_parser("smoke", help="end-to-end synthetic smoke experiment")
    _add_config_options(smoke)
    smoke.add_argument("--seed", type=int, default=0)
    smoke.set_defaults(handler=_cmd_smoke)

    ablate = commands.add_parser("ablate", help="train every ablation combination")
    _add_config_options(ablate)
    ablate.add_argument("--steps", type=int, default=20)
    ablate.set_defaults(handler=_cmd_ablate)

    sweep = commands.add_parser("uv-sweep", help="train one model per UV loss weight")
    _add_config_options(sweep)
    sweep.add_argument("--weights", type=float, nargs="+")
    sweep.add_argument("--pretrain-checkpoint")
    sweep.set_defaults(handler=_cmd_uv_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> None:
    """CLI entry point; user errors exit with status 1 and no traceback."""
    _configure_logging()
    args = build_parser().parse_args(argv)
    handler: Handler = args.handler
    try:
        handler(args)
    except ValueError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"Error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
