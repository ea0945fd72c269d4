"""Tests for facefill.evaluation."""

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from facefill.config import AblationFlags, RunConfig
from facefill.data import SyntheticFaceDataset, read_image, write_image, write_synthetic_dataset
from facefill.data.uvio import read_uv_field
from facefill.errors import CheckpointError, IngestionError, ShapeError
from facefill.evaluation import (
    _load_mask,
    evaluate_dataset,
    infer_directory,
    json_float,
    load_generator,
    write_report,
)
from facefill.trainer import JointResult, run_joint, run_pretrain


@pytest.fixture
def trained(tiny_config: RunConfig) -> JointResult:
    flags = AblationFlags(use_contrastive_init=False)
    return run_joint(dataclasses.replace(tiny_config, ablation=flags, joint_steps=1))


@pytest.fixture
def faces(tmp_path: Path) -> Path:
    return write_synthetic_dataset(tmp_path / "faces", 2, (32, 32), 5, split="test")


class TestLoadGenerator:
    def test_restores_config_and_eval_mode(self, trained: JointResult) -> None:
        generator, config = load_generator(trained.checkpoint)
        assert not generator.training
        assert config.data.image_size == (32, 32)
        assert config.ablation.use_contrastive_init is False

    def test_rejects_pretrain_checkpoint(self, tiny_config: RunConfig) -> None:
        with pytest.raises(CheckpointError, match="expected a 'joint'"):
            load_generator(run_pretrain(tiny_config))


class TestEvaluateDataset:
    def test_report_fields(self, trained: JointResult, tmp_path: Path) -> None:
        dataset = SyntheticFaceDataset(4, (32, 32), seed=11)
        out = tmp_path / "report.json"
        report = evaluate_dataset(trained.checkpoint, dataset, batch_size=3, out=out)
        assert report["count"] == 4
        assert len(report["rows"]) == 4
        for key in ("psnr_mean", "ssim_mean", "masked_psnr_mean", "frechet", "uv_mse_mean"):
            assert math.isfinite(report[key]), key
        assert 0.0 <= report["auc"] <= 1.0
        assert 0.0 <= report["masked_tpr_at_1pct"] <= 1.0
        assert json.loads(out.read_text())["count"] == 4

    def test_in_memory_generator_matches_checkpoint(self, trained: JointResult) -> None:
        dataset = SyntheticFaceDataset(2, (32, 32), seed=3)
        from_memory = evaluate_dataset(trained.generator, dataset, trained.backbones.embedder)
        from_disk = evaluate_dataset(trained.checkpoint, dataset)
        assert from_memory["psnr_mean"] == pytest.approx(from_disk["psnr_mean"], rel=1e-5)

    def test_in_memory_generator_needs_embedder(self, trained: JointResult) -> None:
        with pytest.raises(ValueError, match="embedder is required"):
            evaluate_dataset(trained.generator, SyntheticFaceDataset(2, (32, 32), seed=0))

    def test_single_image_skips_verification(self, trained: JointResult) -> None:
        report = evaluate_dataset(trained.checkpoint, SyntheticFaceDataset(1, (32, 32), seed=0))
        assert report["count"] == 1
        assert report["auc"] is None and report["tpr_at_0p1pct"] is None

    def test_uv_ablation_has_no_uv_error(self, tiny_config: RunConfig) -> None:
        flags = AblationFlags(use_contrastive_init=False, use_uv=False)
        result = run_joint(dataclasses.replace(tiny_config, ablation=flags, joint_steps=1))
        report = evaluate_dataset(result.checkpoint, SyntheticFaceDataset(2, (32, 32), seed=0))
        assert "uv_mse_mean" not in report


class TestReportEncoding:
    def test_json_float(self) -> None:
        assert json_float(math.inf) == "inf"
        assert json_float(-math.inf) == "-inf"
        assert json_float(1.5) == 1.5
        assert json_float(None) is None

    def test_write_report_encodes_infinities(self, tmp_path: Path) -> None:
        path = write_report(
            tmp_path / "nested" / "r.json", {"psnr": math.inf, "rows": [{"psnr": -math.inf}]}
        )
        assert json.loads(path.read_text()) == {"psnr": "inf", "rows": [{"psnr": "-inf"}]}


class TestInferDirectory:
    def test_writes_completions(self, trained: JointResult, faces: Path, tmp_path: Path) -> None:
        written = infer_directory(trained.checkpoint, faces, tmp_path / "out")
        assert sorted(p.name for p in written) == ["00000.png", "00001.png"]
        assert read_image(written[0]).shape == (3, 32, 32)

    def test_optional_outputs(self, trained: JointResult, faces: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        written = infer_directory(
            trained.checkpoint, faces, out, emit_uv=True, emit_alpha=True, emit_scales=True
        )
        names = {p.name for p in written}
        assert {"00000.uvf", "00000_alpha.png", "00000_scale1.png", "00000_scale3.png"} <= names
        assert len(written) == 2 * (1 + 1 + 1 + 3)
        assert read_uv_field(out / "00001.uvf").u.shape == (32, 32)

    def test_size_mismatch(self, trained: JointResult, tmp_path: Path) -> None:
        root = write_synthetic_dataset(tmp_path / "big", 1, (64, 64), 0)
        with pytest.raises(ShapeError, match="model expects 32x32"):
            infer_directory(trained.checkpoint, root, tmp_path / "out")

    def test_missing_images(self, trained: JointResult, tmp_path: Path) -> None:
        with pytest.raises(IngestionError, match="missing directory"):
            infer_directory(trained.checkpoint, tmp_path / "nothing", tmp_path / "out")
        (tmp_path / "empty" / "images").mkdir(parents=True)
        with pytest.raises(IngestionError, match="no \\*.png"):
            infer_directory(trained.checkpoint, tmp_path / "empty", tmp_path / "out")


class TestMaskDiscovery:
    def test_black_pixels_are_occluded(self, tmp_path: Path) -> None:
        image = np.full((3, 8, 8), 0.5, dtype=np.float32)
        image[:, 2:4, 2:4] = 0.0
        image[0, 6, 6] = 0.0
        mask = _load_mask(tmp_path / "masks", "a", image)
        assert mask.shape == (1, 8, 8)
        assert mask.sum() == 4
        assert mask[0, 6, 6] == 0

    def test_mask_file_wins(self, tmp_path: Path) -> None:
        image = np.zeros((3, 8, 8), dtype=np.float32)
        drawn = np.zeros((1, 8, 8), dtype=np.float32)
        drawn[0, :4] = 1.0
        write_image(tmp_path / "masks" / "a.png", drawn)
        mask = _load_mask(tmp_path / "masks", "a", image)
        assert mask.sum() == 32

    def test_mask_file_shape_mismatch(self, tmp_path: Path) -> None:
        write_image(tmp_path / "masks" / "a.png", np.ones((1, 4, 4), dtype=np.float32))
        with pytest.raises(IngestionError, match="mask shape"):
            _load_mask(tmp_path / "masks", "a", np.zeros((3, 8, 8), dtype=np.float32))
