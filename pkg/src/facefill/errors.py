"""Error types raised across facefill.

Every error is also a ``ValueError`` so callers that only care about
"bad input" can keep catching that, the way the CLI does.
"""

from __future__ import annotations


class FacefillError(Exception):
    """Base class for facefill errors."""


class ConfigError(FacefillError, ValueError):
    """A configuration value is out of range or inconsistent."""


class ShapeError(FacefillError, ValueError):
    """Tensor shapes do not satisfy an operation's precondition."""


class StateError(FacefillError, ValueError):
    """An object is not in a state that allows the requested operation."""


class CapacityError(FacefillError, ValueError):
    """A write exceeds a fixed-capacity container."""


class IngestionError(FacefillError, ValueError):
    """A dataset file is missing, unreadable or inconsistent."""

    def __init__(self, path: object, reason: str) -> None:
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class CheckpointError(FacefillError, ValueError):
    """A checkpoint archive is malformed or incompatible."""


class ContractError(FacefillError, ValueError):
    """An input violates a documented cross-module contract."""
