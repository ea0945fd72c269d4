import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
sys.path.insert(0, str(SRC))

from facefill.backbones import BackboneConfig  # noqa: E402
from facefill.config import DataConfig, RunConfig  # noqa: E402
from facefill.contrastive import ContrastiveConfig, EncoderConfig  # noqa: E402
from facefill.generator import DecoderConfig  # noqa: E402
from facefill.losses import LossWeights  # noqa: E402

RUN_SLOW = os.environ.get("FACEFILL_RUN_SLOW", "").strip().lower() in {"1", "true", "yes"}


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set FACEFILL_RUN_SLOW=1 to run slow tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_config(output_dir: Path | str, **changes: object) -> RunConfig:
    """32x32 faces, three stages of width 8; trains in well under a second per step."""
    base: dict[str, object] = {
        "data": DataConfig(
            synthetic_count=4,
            eval_count=4,
            image_size=(32, 32),
            mask_coverage=(0.1, 0.5),
            workers=0,
        ),
        "encoder": EncoderConfig(base_width=8, num_stages=3, embed_dim=16),
        "decoder": DecoderConfig(num_scales=3, daf_scales=(1, 2, 3), reduction=4),
        "contrastive": ContrastiveConfig(queue_size=32),
        "loss": LossWeights(scales=(1, 2, 3), texture_scales=(1, 2)),
        "backbone": BackboneConfig(name="random_seeded", embed_dim=16),
        "batch_size": 2,
        "pretrain_steps": 2,
        "joint_steps": 2,
        "checkpoint_every": 1,
        "output_dir": str(output_dir),
    }
    base.update(changes)
    return RunConfig(**base)  # type: ignore[arg-type]


@pytest.fixture
def tiny_config(tmp_path: Path) -> RunConfig:
    return make_tiny_config(tmp_path / "run")


@pytest.fixture(autouse=True)
def _clear_backbone_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("FACEFILL_BACKBONE", raising=False)
