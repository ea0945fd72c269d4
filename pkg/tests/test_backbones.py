"""Tests for facefill.backbones."""

from pathlib import Path

import pytest
import torch

from facefill.backbones import (
    BACKBONE_REGISTRY,
    BackboneConfig,
    FeatureExtractor,
    IdentityEmbedder,
    build_backbones,
    export_backbones,
    get_backbone,
    list_backbones,
)
from facefill.errors import CheckpointError, ConfigError


class TestRegistry:
    def test_lists_backbones(self) -> None:
        assert list_backbones() == ["random_seeded", "external_weights"]

    def test_default(self) -> None:
        assert get_backbone().name == "random_seeded"

    def test_env_var_selects(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("FACEFILL_BACKBONE", "external_weights")
        assert get_backbone() is BACKBONE_REGISTRY["external_weights"]

    def test_explicit_name_wins_over_env(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("FACEFILL_BACKBONE", "external_weights")
        assert get_backbone("random_seeded").name == "random_seeded"

    def test_unknown_name(self) -> None:
        with pytest.raises(ConfigError, match="Unknown backbone: vgg. Available:"):
            get_backbone("vgg")


class TestRandomSeeded:
    def test_same_seed_same_weights(self) -> None:
        a = build_backbones(BackboneConfig(seed=3, embed_dim=16))
        b = build_backbones(BackboneConfig(seed=3, embed_dim=16))
        for left, right in zip(a.modules(), b.modules(), strict=True):
            for p, q in zip(left.parameters(), right.parameters(), strict=True):
                assert torch.equal(p, q)

    def test_frozen_but_differentiable_to_input(self) -> None:
        backbones = build_backbones(BackboneConfig(embed_dim=16))
        assert all(not p.requires_grad for m in backbones.modules() for p in m.parameters())
        assert not backbones.extractor.training
        x = torch.rand(1, 3, 16, 16, requires_grad=True)
        backbones.embedder(x).sum().backward()
        assert x.grad is not None and x.grad.abs().sum() > 0

    def test_protocol_shapes(self) -> None:
        backbones = build_backbones(BackboneConfig(embed_dim=16))
        assert isinstance(backbones.extractor, FeatureExtractor)
        assert isinstance(backbones.embedder, IdentityEmbedder)
        taps = backbones.extractor(torch.rand(2, 3, 32, 32))
        assert [t.shape[1:] for t in taps] == [(16, 32, 32), (32, 16, 16), (64, 8, 8)]
        assert backbones.embedder(torch.rand(2, 3, 32, 32)).shape == (2, 16)

    def test_extractor_rejects_tiny_inputs(self) -> None:
        backbones = build_backbones(BackboneConfig(embed_dim=16))
        with pytest.raises(ConfigError, match="below the extractor minimum"):
            backbones.extractor(torch.rand(1, 3, 4, 4))

    def test_config_validation(self) -> None:
        with pytest.raises(ConfigError):
            BackboneConfig(embed_dim=0)


class TestExternalWeights:
    def test_loads_exported_weights(self, tmp_path: Path) -> None:
        source = build_backbones(BackboneConfig(seed=9, embed_dim=16))
        path = export_backbones(tmp_path / "backbone.ckpt", source)
        loaded = build_backbones(
            BackboneConfig(name="external_weights", embed_dim=16, weights_path=str(path))
        )
        x = torch.rand(1, 3, 32, 32)
        assert torch.equal(source.embedder(x), loaded.embedder(x))
        assert not any(p.requires_grad for p in loaded.embedder.parameters())

    def test_requires_weights_path(self) -> None:
        with pytest.raises(ConfigError, match="weights_path"):
            build_backbones(BackboneConfig(name="external_weights"))

    def test_shape_checked(self, tmp_path: Path) -> None:
        path = export_backbones(
            tmp_path / "b.ckpt", build_backbones(BackboneConfig(embed_dim=16))
        )
        with pytest.raises(CheckpointError, match="shape"):
            build_backbones(
                BackboneConfig(name="external_weights", embed_dim=32, weights_path=str(path))
            )
