"""Named-array checkpoint archives.

Archive layout (``facefill-ckpt/1``)::

    manifest.json          UTF-8 JSON, keys sorted:
                             format    "facefill-ckpt/1"
                             kind      "pretrain" | "joint" | "backbone" | ...
                             step      int
                             arrays    {name: {"dtype": str, "shape": [int, ...]}}
                             metadata  free-form JSON object
    arrays/<name>.npy      one NumPy .npy file per named array

The container is a ZIP file with stored (uncompressed) entries, a fixed
1980-01-01 timestamp and entries in sorted order, so writing the same arrays
and metadata twice produces identical bytes. Array names use ``/`` as a
namespace separator (``encoder_q/stages.0.0.weight``).
"""

from __future__ import annotations

import io
import json
import logging
import zipfile
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from facefill.errors import CheckpointError
from facefill.telemetry import trace_span

logger = logging.getLogger("facefill.checkpoint")

FORMAT_TAG = "facefill-ckpt/1"
PRETRAIN_KIND = "pretrain"
JOINT_KIND = "joint"
_MANIFEST = "manifest.json"
_ARRAY_PREFIX = "arrays/"
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)

ArrayLike = np.ndarray | torch.Tensor


@dataclass
class Checkpoint:
    """In-memory view of an archive."""

    kind: str
    step: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def expect_kind(self, kind: str, source: str | Path) -> None:
        if self.kind != kind:
            raise CheckpointError(f"{source}: expected a '{kind}' checkpoint, got '{self.kind}'")

    def require(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise CheckpointError(f"checkpoint ({self.kind}) has no array '{name}'") from None

    def namespace(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix/`` with the prefix stripped."""
        head = prefix.rstrip("/") + "/"
        return {
            name[len(head) :]: value
            for name, value in self.arrays.items()
            if name.startswith(head)
        }


def _to_numpy(value: ArrayLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().contiguous().numpy().copy()
    return np.ascontiguousarray(value)


def _zip_info(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(
    path: str | Path,
    arrays: Mapping[str, ArrayLike],
    *,
    kind: str,
    step: int,
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Write an archive and return its path."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    converted = {name: _to_numpy(value) for name, value in arrays.items()}
    manifest = {
        "format": FORMAT_TAG,
        "kind": kind,
        "step": int(step),
        "arrays": {
            name: {"dtype": value.dtype.str, "shape": list(value.shape)}
            for name, value in sorted(converted.items())
        },
        "metadata": dict(metadata or {}),
    }
    with trace_span("checkpoint/save", attributes={"facefill.kind": kind, "facefill.step": step}):
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w") as archive:
            archive.writestr(
                _zip_info(_MANIFEST),
                json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"),
            )
            for name in sorted(converted):
                payload = io.BytesIO()
                np.lib.format.write_array(payload, converted[name], allow_pickle=False)
                archive.writestr(_zip_info(f"{_ARRAY_PREFIX}{name}.npy"), payload.getvalue())
        target.write_bytes(buffer.getvalue())
    logger.debug("Wrote %s checkpoint at step %d: %s", kind, step, target)
    return target


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read an archive written by ``save_checkpoint``."""
    source = Path(path)
    if not source.is_file():
        raise CheckpointError(f"checkpoint not found: {source}")
    try:
        with zipfile.ZipFile(source, "r") as archive:
            manifest = json.loads(archive.read(_MANIFEST).decode("utf-8"))
            if manifest.get("format") != FORMAT_TAG:
                raise CheckpointError(
                    f"{source}: unsupported checkpoint format {manifest.get('format')!r}"
                )
            arrays: dict[str, np.ndarray] = {}
            for name, spec in manifest["arrays"].items():
                raw = archive.read(f"{_ARRAY_PREFIX}{name}.npy")
                value = np.lib.format.read_array(io.BytesIO(raw), allow_pickle=False)
                if list(value.shape) != list(spec["shape"]) or value.dtype.str != spec["dtype"]:
                    raise CheckpointError(f"{source}: array '{name}' does not match manifest")
                arrays[name] = value
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: malformed checkpoint ({exc})") from exc
    return Checkpoint(
        kind=str(manifest["kind"]),
        step=int(manifest["step"]),
        arrays=arrays,
        metadata=dict(manifest.get("metadata") or {}),
    )


def module_arrays(prefix: str, module: nn.Module) -> dict[str, np.ndarray]:
    """Flatten a module's state dict under ``prefix/``."""
    return {f"{prefix}/{name}": _to_numpy(value) for name, value in module.state_dict().items()}


def restore_module(module: nn.Module, arrays: Mapping[str, np.ndarray], *, source: str) -> None:
    """Load arrays (already stripped of their prefix) into ``module``, strictly."""
    expected = module.state_dict()
    missing = sorted(set(expected) - set(arrays))
    unexpected = sorted(set(arrays) - set(expected))
    if missing or unexpected:
        raise CheckpointError(
            f"{source}: state mismatch (missing={missing[:5]}, unexpected={unexpected[:5]})"
        )
    state: dict[str, torch.Tensor] = {}
    for name, reference in expected.items():
        value = arrays[name]
        if tuple(value.shape) != tuple(reference.shape):
            raise CheckpointError(
                f"{source}: '{name}' has shape {tuple(value.shape)}, "
                f"expected {tuple(reference.shape)}"
            )
        state[name] = torch.from_numpy(np.array(value, copy=True)).to(reference.dtype)
    module.load_state_dict(state)


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple | list):
        return [_jsonable(item) for item in value]
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    return value


def optimizer_arrays(
    prefix: str, optimizer: torch.optim.Optimizer
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Flatten optimizer state into named arrays plus JSON metadata."""
    state_dict = optimizer.state_dict()
    arrays: dict[str, np.ndarray] = {}
    scalars: dict[str, Any] = {}
    for index, entry in state_dict["state"].items():
        for key, value in entry.items():
            name = f"{index}/{key}"
            if isinstance(value, torch.Tensor):
                arrays[f"{prefix}/{name}"] = _to_numpy(value)
            else:
                scalars[name] = value
    metadata = {"param_groups": _jsonable(state_dict["param_groups"]), "scalars": scalars}
    return arrays, metadata


def restore_optimizer(
    optimizer: torch.optim.Optimizer,
    arrays: Mapping[str, np.ndarray],
    metadata: Mapping[str, Any],
) -> None:
    """Inverse of ``optimizer_arrays``; ``arrays`` are stripped of their prefix."""
    state: dict[int, dict[str, Any]] = {}
    for name, value in arrays.items():
        index, key = name.split("/", 1)
        state.setdefault(int(index), {})[key] = torch.from_numpy(np.array(value, copy=True))
    for name, value in dict(metadata.get("scalars") or {}).items():
        index, key = name.split("/", 1)
        state.setdefault(int(index), {})[key] = value
    groups = [dict(group) for group in metadata.get("param_groups") or []]
    for group in groups:
        if "betas" in group:
            group["betas"] = tuple(group["betas"])
    try:
        optimizer.load_state_dict({"state": state, "param_groups": groups})
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"optimizer state incompatible: {exc}") from exc
