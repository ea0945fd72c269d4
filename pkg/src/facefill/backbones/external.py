from __future__ import annotations

import logging
from pathlib import Path

from facefill.backbones.base import BackboneConfig, Backbones, freeze
from facefill.backbones.random_seeded import build_architectures
from facefill.checkpoint import load_checkpoint, module_arrays, restore_module, save_checkpoint
from facefill.errors import ConfigError

logger = logging.getLogger("facefill.backbones")

BACKBONE_KIND = "backbone"


class ExternalWeightsBackbone:
    """Loads extractor/embedder weights from a ``backbone`` checkpoint archive."""

    name = "external_weights"

    def build(self, config: BackboneConfig) -> Backbones:
        if not config.weights_path:
            raise ConfigError("external_weights backbone requires backbone.weights_path")
        checkpoint = load_checkpoint(config.weights_path)
        checkpoint.expect_kind(BACKBONE_KIND, config.weights_path)
        backbones = build_architectures(config)
        source = str(config.weights_path)
        restore_module(backbones.extractor, checkpoint.namespace("extractor"), source=source)
        restore_module(backbones.embedder, checkpoint.namespace("embedder"), source=source)
        logger.info("Loaded backbone weights from %s", source)
        return Backbones(extractor=freeze(backbones.extractor), embedder=freeze(backbones.embedder))


def export_backbones(path: str | Path, backbones: Backbones) -> Path:
    """Write ``backbones`` in the archive layout ``ExternalWeightsBackbone`` reads."""
    arrays = {
        **module_arrays("extractor", backbones.extractor),
        **module_arrays("embedder", backbones.embedder),
    }
    return save_checkpoint(path, arrays, kind=BACKBONE_KIND, step=0)
