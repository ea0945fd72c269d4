"""Tests for facefill.config."""

import json
from pathlib import Path

import pytest

from facefill.config import (
    AblationFlags,
    DataConfig,
    RunConfig,
    Stage,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    load_config,
    write_config,
)
from facefill.errors import ConfigError
from facefill.generator import DecoderConfig
from facefill.losses import LossWeights


class TestRunConfig:
    def test_defaults(self) -> None:
        config = RunConfig()
        assert config.stage is Stage.JOINT
        assert config.data.image_size == (128, 128)
        assert config.contrastive.queue_size == 4096
        assert config.ablation.label == "cl1-daf1-uv1"

    def test_rejects_indivisible_image(self) -> None:
        with pytest.raises(ConfigError, match="divisible"):
            RunConfig(data=DataConfig(image_size=(100, 128)))

    def test_rejects_loss_scale_without_output(self) -> None:
        with pytest.raises(ConfigError, match="not all emitted"):
            RunConfig(
                decoder=DecoderConfig(num_scales=6, daf_scales=(1, 2)),
            )

    def test_accepts_matching_scales(self) -> None:
        config = RunConfig(
            decoder=DecoderConfig(num_scales=6, daf_scales=(1, 2)),
            loss=LossWeights(scales=(1, 2), texture_scales=(1,)),
        )
        assert config.loss.scales == (1, 2)

    def test_unknown_stage(self) -> None:
        with pytest.raises(ConfigError, match="unknown stage"):
            RunConfig(stage="finetune")  # type: ignore[arg-type]

    @pytest.mark.parametrize(
        "field, value",
        [("batch_size", 0), ("joint_steps", -1), ("checkpoint_every", 0), ("joint_lr", 0.0)],
    )
    def test_rejects_bad_scalars(self, field: str, value: object) -> None:
        with pytest.raises(ConfigError):
            RunConfig(**{field: value})  # type: ignore[arg-type]

    def test_mask_coverage_range(self) -> None:
        with pytest.raises(ConfigError, match="mask_coverage"):
            DataConfig(mask_coverage=(0.3, 0.7))

    def test_effective_loss_drops_uv_when_ablated(self) -> None:
        config = RunConfig(ablation=AblationFlags(use_uv=False))
        assert config.effective_loss().uv == 0.0
        assert RunConfig().effective_loss().uv == 0.1


class TestSerialization:
    def test_dict_round_trip(self) -> None:
        config = RunConfig(seed=3, output_dir="runs/x", ablation=AblationFlags(use_daf=False))
        assert config_from_dict(config_to_dict(config)) == config

    def test_partial_dict_keeps_defaults(self) -> None:
        config = config_from_dict({"seed": 7, "data": {"synthetic_count": 8}})
        assert config.seed == 7
        assert config.data.synthetic_count == 8
        assert config.data.eval_count == 16

    def test_unknown_top_level_key(self) -> None:
        with pytest.raises(ConfigError, match="unknown config keys in config: bogus"):
            config_from_dict({"bogus": 1})

    def test_unknown_nested_key(self) -> None:
        with pytest.raises(ConfigError, match="unknown config keys in loss: lambda"):
            config_from_dict({"loss": {"lambda": 1}})

    def test_texture_scales_belong_to_loss(self) -> None:
        with pytest.raises(ConfigError, match="unknown config keys in decoder: texture_scales"):
            config_from_dict({"decoder": {"texture_scales": [1]}})
        config = config_from_dict({"loss": {"texture_scales": [1]}})
        assert config.loss.texture_scales == (1,)

    def test_nested_must_be_object(self) -> None:
        with pytest.raises(ConfigError, match="must be an object"):
            config_from_dict({"data": 5})

    def test_file_round_trip(self, tmp_path: Path) -> None:
        path = write_config(RunConfig(seed=11), tmp_path / "cfg" / "run.json")
        assert load_config(path).seed == 11
        assert json.loads(path.read_text())["stage"] == "joint"

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_none_gives_defaults(self) -> None:
        assert load_config(None) == RunConfig()


class TestOverrides:
    def test_nested_json_values(self) -> None:
        config = apply_overrides(
            RunConfig(),
            ["loss.uv=0.5", "data.image_size=[64, 64]", "ablation.use_daf=false"],
        )
        assert config.loss.uv == 0.5
        assert config.data.image_size == (64, 64)
        assert config.ablation.use_daf is False

    def test_string_fallback(self) -> None:
        assert apply_overrides(RunConfig(), ["output_dir=runs/abc"]).output_dir == "runs/abc"

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError, match="unknown config key in override: loss.nope"):
            apply_overrides(RunConfig(), ["loss.nope=1"])

    def test_unknown_section(self) -> None:
        with pytest.raises(ConfigError, match="unknown config section"):
            apply_overrides(RunConfig(), ["seed.x=1"])

    def test_malformed(self) -> None:
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides(RunConfig(), ["seed"])

    def test_override_is_validated(self) -> None:
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), ["contrastive.temperature=0"])
