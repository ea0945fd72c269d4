"""Synthetic face-like images with analytic UV ground truth.

A shaded ellipsoid "head" is rendered over a gradient background. The UV
field is the cylindrical unwrapping of the ellipsoid's front surface: for a
visible point with normalized ellipse coordinates (X, Y) and depth
Z = sqrt(1 - X^2 - Y^2), u = 1/2 + atan2(X, Z)/pi and v = (Y + 1)/2. Eyes and
mouth are painted in UV space, so they follow the surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from facefill.errors import ContractError, ShapeError

MIN_FACE_SIZE = 32

# Facial features in UV space: (u, v, radius_u, radius_v, darkness).
_FEATURES: tuple[tuple[float, float, float, float, float], ...] = (
    (0.38, 0.40, 0.045, 0.03, 0.75),
    (0.62, 0.40, 0.045, 0.03, 0.75),
    (0.50, 0.72, 0.11, 0.025, 0.55),
    (0.50, 0.56, 0.02, 0.06, 0.2),
)


@dataclass(frozen=True)
class UVField:
    """Dense correspondence field: u, v in [0,1] on the face, 0 elsewhere."""

    u: np.ndarray
    v: np.ndarray
    validity: np.ndarray

    def __post_init__(self) -> None:
        shape = self.validity.shape
        if self.u.shape != shape or self.v.shape != shape or len(shape) != 2:
            raise ShapeError(
                f"UV field components disagree: u={self.u.shape} v={self.v.shape} "
                f"validity={shape}"
            )
        if not np.isin(self.validity, (0, 1)).all():
            raise ContractError("UV validity map must be binary (0/1)")
        off_face = self.validity == 0
        for name, channel in (("u", self.u), ("v", self.v)):
            # NaN fails the range test.
            if not np.all((channel >= 0.0) & (channel <= 1.0)):
                raise ContractError(f"UV component {name} must lie in [0, 1]")
            if np.any(channel[off_face] != 0.0):
                raise ContractError(f"UV component {name} must be 0 where validity is 0")

    @property
    def shape(self) -> tuple[int, int]:
        h, w = self.validity.shape
        return int(h), int(w)

    def stacked(self) -> np.ndarray:
        """Return [2, H, W] float32 (u, v)."""
        return np.stack([self.u, self.v]).astype(np.float32)


@dataclass(frozen=True)
class FaceParams:
    """Geometry and appearance of one synthetic head (fractions of image size)."""

    center_x: float = 0.5
    center_y: float = 0.5
    semi_axis_x: float = 0.32
    semi_axis_y: float = 0.4
    rotation: float = 0.0
    skin: tuple[float, float, float] = (0.85, 0.65, 0.55)
    background_top: tuple[float, float, float] = (0.2, 0.3, 0.45)
    background_bottom: tuple[float, float, float] = (0.5, 0.55, 0.6)
    light: tuple[float, float, float] = (0.3, -0.4, 0.87)
    ambient: float = 0.35

    @classmethod
    def from_seed(cls, seed: int) -> FaceParams:
        rng = np.random.default_rng(seed)
        light = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.3), 1.0])
        light /= np.linalg.norm(light)
        return cls(
            center_x=float(rng.uniform(0.42, 0.58)),
            center_y=float(rng.uniform(0.42, 0.58)),
            semi_axis_x=float(rng.uniform(0.25, 0.36)),
            semi_axis_y=float(rng.uniform(0.32, 0.44)),
            rotation=float(rng.uniform(-0.25, 0.25)),
            skin=_triple(rng.uniform([0.55, 0.35, 0.25], [0.95, 0.8, 0.7])),
            background_top=_triple(rng.uniform(0.05, 0.6, size=3)),
            background_bottom=_triple(rng.uniform(0.2, 0.9, size=3)),
            light=_triple(light),
            ambient=float(rng.uniform(0.25, 0.45)),
        )


def _triple(values: np.ndarray) -> tuple[float, float, float]:
    return float(values[0]), float(values[1]), float(values[2])


def render_face(params: FaceParams, h: int, w: int) -> tuple[np.ndarray, UVField]:
    """Render ``params`` into a [3, h, w] float32 image in [0,1] and its UV field."""
    if h < MIN_FACE_SIZE or w < MIN_FACE_SIZE:
        raise ShapeError(f"face size must be at least {MIN_FACE_SIZE}x{MIN_FACE_SIZE}, got {h}x{w}")
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    dx = xs - params.center_x * w
    dy = ys - params.center_y * h
    cos_r, sin_r = math.cos(params.rotation), math.sin(params.rotation)
    local_x = (cos_r * dx + sin_r * dy) / (params.semi_axis_x * w)
    local_y = (-sin_r * dx + cos_r * dy) / (params.semi_axis_y * h)
    radius_sq = local_x**2 + local_y**2
    inside = radius_sq < 1.0
    depth = np.sqrt(np.clip(1.0 - radius_sq, 0.0, None))

    u = np.where(inside, 0.5 + np.arctan2(local_x, depth) / math.pi, 0.0)
    v = np.where(inside, 0.5 * (local_y + 1.0), 0.0)
    u = np.clip(u, 0.0, 1.0)
    v = np.clip(v, 0.0, 1.0)

    # Lambertian shading on the ellipsoid normal.
    normal = np.stack([local_x, local_y, depth])
    normal /= np.maximum(np.linalg.norm(normal, axis=0, keepdims=True), 1e-8)
    light = np.asarray(params.light).reshape(3, 1, 1)
    diffuse = np.clip((normal * light).sum(axis=0), 0.0, 1.0)
    shade = params.ambient + (1.0 - params.ambient) * diffuse

    albedo = np.ones((h, w))
    for fu, fv, ru, rv, darkness in _FEATURES:
        blob = np.exp(-(((u - fu) / ru) ** 2 + ((v - fv) / rv) ** 2))
        albedo *= 1.0 - darkness * blob

    skin = np.asarray(params.skin).reshape(3, 1, 1)
    face = skin * (albedo * shade)[None]
    ramp = (ys / max(h - 1, 1))[None]
    top = np.asarray(params.background_top).reshape(3, 1, 1)
    bottom = np.asarray(params.background_bottom).reshape(3, 1, 1)
    background = (1.0 - ramp) * top + ramp * bottom

    image = np.where(inside[None], face, background)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    field = UVField(
        u=u.astype(np.float32),
        v=v.astype(np.float32),
        validity=inside.astype(np.uint8),
    )
    return image, field


def generate_synthetic_face(seed: int, h: int, w: int) -> tuple[np.ndarray, UVField]:
    """Render the seeded head; distinct seeds give distinct geometry."""
    return render_face(FaceParams.from_seed(seed), h, w)
