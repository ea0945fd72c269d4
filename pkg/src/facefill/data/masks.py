"""Procedural occlusion masks.

Four families stand in for real face-mask overlays. Each family draws a
seeded base shape and then grows it by a scale factor chosen by bisection so
the painted area lands as close as possible to ``coverage * h * w``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from PIL import Image, ImageDraw

from facefill.errors import ConfigError, ShapeError

logger = logging.getLogger("facefill.masks")

MAX_COVERAGE = 0.6
COVERAGE_TOLERANCE = 0.2
MIN_MASK_SIZE = 8
_BISECTION_STEPS = 40


class MaskKind(StrEnum):
    RECT = "rect"
    ELLIPSE = "ellipse"
    POLYGON_LOWER_FACE = "polygon_lower_face"
    FREEFORM_STROKE = "freeform_stroke"


@dataclass(frozen=True)
class MaskSpec:
    """Recipe for one mask bitmap; identical specs render identical bitmaps."""

    kind: MaskKind
    coverage: float
    seed: int

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", MaskKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown mask kind: {self.kind!r}") from None
        if not 0.0 < self.coverage <= MAX_COVERAGE:
            raise ConfigError(f"mask coverage must be in (0, {MAX_COVERAGE}], got {self.coverage}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"mask seed must be a 64-bit unsigned integer, got {self.seed}")


Renderer = Callable[[float], np.ndarray]


def _canvas(h: int, w: int) -> tuple[Image.Image, ImageDraw.ImageDraw]:
    image = Image.new("L", (w, h), 0)
    return image, ImageDraw.Draw(image)


def _bitmap(image: Image.Image) -> np.ndarray:
    return (np.asarray(image, dtype=np.uint8) > 0).astype(np.float32)


def _scaled_polygon(
    anchor: tuple[float, float],
    offsets: np.ndarray,
    scale: float,
    h: int,
    w: int,
) -> np.ndarray:
    """Rasterize ``anchor + scale * offsets`` (offsets as (dx, dy) rows)."""
    image, draw = _canvas(h, w)
    ax, ay = anchor
    points = [(ax + scale * dx, ay + scale * dy) for dx, dy in offsets]
    draw.polygon(points, fill=1)
    return _bitmap(image)


def _rect_renderer(rng: np.random.Generator, h: int, w: int) -> Renderer:
    cx = rng.uniform(0.25, 0.75) * w
    cy = rng.uniform(0.25, 0.75) * h
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    half_w, half_h = math.sqrt(aspect), 1.0 / math.sqrt(aspect)
    offsets = np.array(
        [(-half_w, -half_h), (half_w, -half_h), (half_w, half_h), (-half_w, half_h)]
    )

    def render(scale: float) -> np.ndarray:
        return _scaled_polygon((cx, cy), offsets, scale, h, w)

    return render


def _ellipse_renderer(rng: np.random.Generator, h: int, w: int) -> Renderer:
    cx = rng.uniform(0.3, 0.7) * w
    cy = rng.uniform(0.3, 0.7) * h
    ratio = rng.uniform(0.5, 1.0)
    theta = rng.uniform(0.0, math.pi)
    angles = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    ex, ey = np.cos(angles), ratio * np.sin(angles)
    offsets = np.stack(
        [ex * math.cos(theta) - ey * math.sin(theta), ex * math.sin(theta) + ey * math.cos(theta)],
        axis=1,
    )

    def render(scale: float) -> np.ndarray:
        return _scaled_polygon((cx, cy), offsets, scale, h, w)

    return render


def _lower_face_renderer(rng: np.random.Generator, h: int, w: int) -> Renderer:
    # Surgical-mask silhouette: wide top edge at nose height, narrower chin.
    cx = (0.5 + rng.uniform(-0.05, 0.05)) * w
    cy = rng.uniform(0.68, 0.78) * h
    top = rng.uniform(0.35, 0.45)
    chin = rng.uniform(0.2, 0.3)
    offsets = np.array(
        [
            (-0.50, -top),
            (0.50, -top),
            (0.55, 0.05),
            (chin + 0.1, 0.35),
            (0.0, 0.45),
            (-chin - 0.1, 0.35),
            (-0.55, 0.05),
        ]
    ) * np.array([w / max(h, w), h / max(h, w)])

    def render(scale: float) -> np.ndarray:
        return _scaled_polygon((cx, cy), offsets, scale, h, w)

    return render


def _stroke_renderer(rng: np.random.Generator, h: int, w: int) -> Renderer:
    size = max(h, w)
    points = [(rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h)]
    heading = rng.uniform(0.0, 2.0 * math.pi)
    for _ in range(int(rng.integers(3, 6))):
        heading += rng.uniform(-1.2, 1.2)
        length = rng.uniform(0.15, 0.35) * size
        x = min(max(points[-1][0] + length * math.cos(heading), 0.0), w - 1.0)
        y = min(max(points[-1][1] + length * math.sin(heading), 0.0), h - 1.0)
        points.append((x, y))

    def render(scale: float) -> np.ndarray:
        width = max(1, int(round(scale)))
        image, draw = _canvas(h, w)
        draw.line(points, fill=1, width=width)
        radius = width / 2.0
        for x, y in points:
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=1)
        return _bitmap(image)

    return render


_RENDERERS: dict[MaskKind, Callable[[np.random.Generator, int, int], Renderer]] = {
    MaskKind.RECT: _rect_renderer,
    MaskKind.ELLIPSE: _ellipse_renderer,
    MaskKind.POLYGON_LOWER_FACE: _lower_face_renderer,
    MaskKind.FREEFORM_STROKE: _stroke_renderer,
}


def _fit_scale(render: Renderer, target: float, upper: float) -> np.ndarray:
    """Bisect the scale whose rendered area is closest to ``target`` pixels."""
    lo, hi = 0.0, upper
    best = render(hi)
    best_error = abs(float(best.sum()) - target)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        candidate = render(mid)
        area = float(candidate.sum())
        error = abs(area - target)
        if error < best_error:
            best, best_error = candidate, error
        if area < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-3:
            break
    return best


def _touching(mask: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour set in ``mask``."""
    padded = np.pad(mask, 1)
    return padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]


def _settle_area(bitmap: np.ndarray, pixels: int, rng: np.random.Generator) -> np.ndarray:
    """Grow or erode the shape's boundary, in seeded order, to exactly ``pixels`` pixels."""
    mask = bitmap > 0
    while (area := int(mask.sum())) != pixels:
        grow = area < pixels
        frontier = (~mask & _touching(mask)) if grow else (mask & _touching(~mask))
        candidates = np.flatnonzero(frontier)
        if candidates.size == 0:
            candidates = np.flatnonzero(~mask if grow else mask)
        chosen = rng.permutation(candidates)[: abs(pixels - area)]
        mask.flat[chosen] = grow
    return mask.astype(np.float32)


def synthesize_mask(spec: MaskSpec, h: int, w: int) -> np.ndarray:
    """Render ``spec`` as a float32 {0,1} array of shape [1, h, w] (1 = occluded).

    The painted area is within ``COVERAGE_TOLERANCE`` of ``coverage * h * w``.
    When the fitted shape misses that band (thin strokes on small canvases do),
    its boundary is grown or eroded pixel by pixel under the spec's seed.
    """
    if h < MIN_MASK_SIZE or w < MIN_MASK_SIZE:
        raise ShapeError(f"mask size must be at least {MIN_MASK_SIZE}x{MIN_MASK_SIZE}, got {h}x{w}")
    target = spec.coverage * h * w
    pixels = round(target)
    if abs(pixels - target) > COVERAGE_TOLERANCE * target:
        raise ConfigError(
            f"coverage {spec.coverage} cannot be drawn on a {h}x{w} canvas "
            f"(target {target:.2f} pixels)"
        )
    rng = np.random.default_rng(spec.seed)
    render = _RENDERERS[spec.kind](rng, h, w)
    # Every family covers the whole canvas well before 4 * max(h, w).
    bitmap = _fit_scale(render, target, upper=4.0 * max(h, w))
    area = float(bitmap.sum())
    if abs(area - target) > COVERAGE_TOLERANCE * target:
        logger.debug(
            "Mask %s coverage %.4f at %dx%d fitted %d pixels; settling to %d",
            spec.kind,
            spec.coverage,
            h,
            w,
            int(area),
            pixels,
        )
        bitmap = _settle_area(bitmap, pixels, np.random.default_rng([spec.seed, 1]))
    return bitmap[None, :, :]


def random_mask_spec(
    rng: np.random.Generator,
    kinds: tuple[MaskKind, ...] = tuple(MaskKind),
    coverage_range: tuple[float, float] = (0.1, 0.5),
) -> MaskSpec:
    """Draw a spec with a uniformly chosen family and coverage."""
    kind = kinds[int(rng.integers(0, len(kinds)))]
    coverage = float(rng.uniform(*coverage_range))
    seed = int(rng.integers(0, 2**63))
    return MaskSpec(kind=kind, coverage=coverage, seed=seed)
