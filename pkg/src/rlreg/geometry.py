"""Similarity-transform algebra, action lattice and bilinear resampling.

A transform ``(tx, ty, scale, angle)`` maps a point ``p`` to
``scale * R(angle) @ (p - c) + c + (tx, ty)`` where ``c`` is the pivot.
The algebra (``compose``, ``invert``, ``to_matrix``) is pivot-free: pivoting is
a conjugation by a translation, so parameters compose identically for any
pivot.  Only point application and image warping take a ``center``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy import ndimage

SCALE_MIN = 0.3
SCALE_MAX = 3.0
SCALE_STEP = 0.05
_LATTICE_DECIMALS = 10


def normalize_angle(deg: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    a = math.fmod(deg, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a + 0.0  # drop negative zero


@dataclass(frozen=True)
class SimilarityTransform:
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0
    angle: float = 0.0  # degrees

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        vals = (self.tx, self.ty, self.scale, self.angle)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite transform parameters {vals}")
        object.__setattr__(self, "angle", normalize_angle(float(self.angle)))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def params(self) -> tuple[float, float, float, float]:
        return (self.tx, self.ty, self.scale, self.angle)

    def __str__(self) -> str:
        return (f"tx={self.tx:.4f} ty={self.ty:.4f} "
                f"s={self.scale:.4f} angle={self.angle:.4f}")


IDENTITY = SimilarityTransform()


class Action(IntEnum):
    TX_PLUS = 0
    TX_MINUS = 1
    TY_PLUS = 2
    TY_MINUS = 3
    ANGLE_PLUS = 4
    ANGLE_MINUS = 5
    SCALE_PLUS = 6
    SCALE_MINUS = 7

    @property
    def opposite(self) -> "Action":
        return Action(self.value ^ 1)


N_ACTIONS = len(Action)

# (field, signed unit delta) per action
ACTION_DELTAS: tuple[tuple[str, float], ...] = (
    ("tx", 1.0), ("tx", -1.0),
    ("ty", 1.0), ("ty", -1.0),
    ("angle", 1.0), ("angle", -1.0),
    ("scale", SCALE_STEP), ("scale", -SCALE_STEP),
)


_QUARTER_TURNS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def cos_sin(deg: float) -> tuple[float, float]:
    """Cosine and sine of an angle in degrees, exact at multiples of 90."""
    if deg % 90 == 0:
        return _QUARTER_TURNS[int(deg // 90) % 4]
    a = math.radians(deg)
    return math.cos(a), math.sin(a)


def to_matrix(t: SimilarityTransform) -> np.ndarray:
    """Return the 2x3 matrix ``[[s cos a, -s sin a, tx], [s sin a, s cos a, ty]]``."""
    c, s = cos_sin(t.angle)
    c, s = t.scale * c, t.scale * s
    return np.array([[c, -s, t.tx], [s, c, t.ty]], dtype=np.float64)


def _homogeneous(t: SimilarityTransform) -> np.ndarray:
    m = np.eye(3)
    m[:2] = to_matrix(t)
    return m


def from_matrix(m: np.ndarray) -> SimilarityTransform:
    """Extract parameters from a 2x3 (or 3x3) similarity matrix."""
    m = np.asarray(m, dtype=np.float64)
    scale = math.hypot(m[0, 0], m[1, 0])
    angle = math.degrees(math.atan2(m[1, 0], m[0, 0]))
    return SimilarityTransform(float(m[0, 2]), float(m[1, 2]), scale, angle)


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Matrix product ``a @ b``: apply ``b`` first, then ``a``."""
    return from_matrix(_homogeneous(a) @ _homogeneous(b))


def invert(t: SimilarityTransform) -> SimilarityTransform:
    inv_s = 1.0 / t.scale
    c, s = cos_sin(t.angle)
    # R(-a) / s applied to -t
    tx = -inv_s * (c * t.tx + s * t.ty)
    ty = -inv_s * (-s * t.tx + c * t.ty)
    return SimilarityTransform(tx, ty, inv_s, -t.angle)


def apply_points(t: SimilarityTransform, pts: np.ndarray,
                 center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Apply ``t`` about ``center`` to an ``(N, 2)`` array of ``(x, y)`` points."""
    pts = np.asarray(pts, dtype=np.float64)
    m = to_matrix(t)
    c = np.asarray(center, dtype=np.float64)
    return (pts - c) @ m[:, :2].T + c + m[:, 2]


def apply_point(t: SimilarityTransform, p: Sequence[float],
                center: Sequence[float] = (0.0, 0.0)) -> tuple[float, float]:
    x, y = apply_points(t, np.asarray([p], dtype=np.float64), center)[0]
    return float(x), float(y)


def apply_action(t: SimilarityTransform, a: int) -> SimilarityTransform:
    """Move one parameter by its unit step; scale is clamped to [0.3, 3.0]."""
    name, delta = ACTION_DELTAS[int(a)]
    tx, ty, s, ang = t.tx, t.ty, t.scale, t.angle
    if name == "tx":
        tx = round(tx + delta, _LATTICE_DECIMALS)
    elif name == "ty":
        ty = round(ty + delta, _LATTICE_DECIMALS)
    elif name == "angle":
        ang = round(ang + delta, _LATTICE_DECIMALS)
    else:
        s = min(max(round(s + delta, _LATTICE_DECIMALS), SCALE_MIN), SCALE_MAX)
    return SimilarityTransform(tx, ty, s, ang)


def lattice_mirror(t: SimilarityTransform) -> SimilarityTransform:
    """Reflect a lattice pose through identity in parameter space.

    ``(tx, ty, s, a) -> (-tx, -ty, 2 - s, -a)``.  Reached from identity by the
    opposite actions of the ones that reach ``t``.
    """
    return SimilarityTransform(-t.tx + 0.0, -t.ty + 0.0,
                               round(2.0 - t.scale, _LATTICE_DECIMALS), -t.angle)


def actions_to_reach(target: SimilarityTransform,
                     start: SimilarityTransform = IDENTITY) -> list[Action]:
    """Shortest action sequence moving ``start`` onto lattice pose ``target``.

    Order: translations, then rotation, then scale.
    """
    seq: list[Action] = []

    def steps(diff: float, unit: float) -> int:
        n = round(diff / unit)
        if abs(n * unit - diff) > 1e-6:
            raise ValueError(f"{target} is not on the action lattice relative to {start}")
        return n

    dangle = normalize_angle(target.angle - start.angle)
    for n, plus, minus in (
        (steps(target.tx - start.tx, 1.0), Action.TX_PLUS, Action.TX_MINUS),
        (steps(target.ty - start.ty, 1.0), Action.TY_PLUS, Action.TY_MINUS),
        (steps(dangle, 1.0), Action.ANGLE_PLUS, Action.ANGLE_MINUS),
        (steps(target.scale - start.scale, SCALE_STEP), Action.SCALE_PLUS, Action.SCALE_MINUS),
    ):
        seq.extend([plus if n > 0 else minus] * abs(n))
    return seq


def image_center(shape: Sequence[int]) -> tuple[float, float]:
    """Pivot ``(x, y)`` of an image with ``shape == (height, width)``."""
    h, w = shape[:2]
    return ((w - 1) / 2.0, (h - 1) / 2.0)


def warp_image(img: np.ndarray, t: SimilarityTransform,
               out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse-map resample of ``img`` under ``t`` (pivot at the image center).

    Output pixel ``(x, y)`` reads ``img`` at ``invert(t) . (x, y)`` with bilinear
    interpolation; reads outside the image contribute 0.  With ``out_shape``
    the output grid spans the same field of view at a different resolution,
    so warping and resizing happen in a single interpolation.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    h, w = img.shape
    oh, ow = out_shape if out_shape is not None else (h, w)
    xs = np.arange(ow, dtype=np.float64)
    ys = np.arange(oh, dtype=np.float64)
    if ow > 1:
        xs *= (w - 1) / (ow - 1)
    if oh > 1:
        ys *= (h - 1) / (oh - 1)
    inv = to_matrix(invert(t))
    cx, cy = image_center((h, w))
    gx, gy = np.meshgrid(xs - cx, ys - cy)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2] + cx
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2] + cy
    out = ndimage.map_coordinates(img, [sy, sx], order=1, mode="grid-constant",
                                  cval=0.0, prefilter=False)
    return out.astype(img.dtype, copy=False)


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to ``size x size`` (corner-aligned grid)."""
    if img.shape == (size, size):
        return img
    return warp_image(img, IDENTITY, out_shape=(size, size))
