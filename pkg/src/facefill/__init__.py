"""Face completion with contrastive pretraining, dual attention fusion and UV supervision."""

from __future__ import annotations

__version__ = "0.1.0"

from .cli import main

__all__ = ["__version__", "main"]
