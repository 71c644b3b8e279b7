"""Procedural multimodal image pairs with exact ground truth, pose sampling and
dataset persistence (8-bit binary PGM plus a JSON manifest)."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .geometry import (SCALE_STEP, SimilarityTransform, invert, lattice_mirror,
                       warp_image)

FORMAT_VERSION = 1
MIN_SIZE = 16


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class MissingFileError(DatasetError):
    pass


class CorruptFileError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


@dataclass
class ImagePair:
    fixed: np.ndarray
    moving_aligned: np.ndarray
    id: str
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.fixed.shape != self.moving_aligned.shape:
            raise ValueError(f"pair {self.id}: image shapes differ "
                             f"{self.fixed.shape} vs {self.moving_aligned.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.fixed.shape


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid used on disk, returned as float32 in [0, 1]."""
    return _from_uint8(np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8))


def _from_uint8(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32) / np.float32(255.0)


def generate_base_image(seed: int, size: int = 84) -> np.ndarray:
    """A deterministic anatomy-like scene: a body outline holding several
    graded ellipses and polygons, plus low-amplitude smooth texture."""
    if size < MIN_SIZE:
        raise ValueError(f"size must be >= {MIN_SIZE}, got {size}")
    rng = np.random.default_rng([seed, 0x5EED])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    img = 0.08 + 0.06 * rng.random() * xx

    def ellipse(cx, cy, rx, ry, theta):
        c, s = np.cos(theta), np.sin(theta)
        u = ((xx - cx) * c + (yy - cy) * s) / rx
        v = (-(xx - cx) * s + (yy - cy) * c) / ry
        return u * u + v * v

    # body outline
    body = ellipse(0.5 + rng.uniform(-0.03, 0.03), 0.5 + rng.uniform(-0.03, 0.03),
                   rng.uniform(0.33, 0.4), rng.uniform(0.28, 0.36), rng.uniform(-0.4, 0.4))
    img = np.where(body <= 1.0, 0.35 + 0.1 * (1 - body), img)

    n_shapes = int(rng.integers(5, 8))
    for k in range(n_shapes):
        cx, cy = rng.uniform(0.28, 0.72, size=2)
        level = rng.uniform(0.45, 0.95) if k % 2 == 0 else rng.uniform(0.0, 0.3)
        grad = rng.uniform(-0.25, 0.25, size=2)
        shade = level + grad[0] * (xx - cx) + grad[1] * (yy - cy)
        if rng.random() < 0.6:
            r = ellipse(cx, cy, rng.uniform(0.05, 0.15), rng.uniform(0.04, 0.12),
                        rng.uniform(0, np.pi))
            mask = r <= 1.0
        else:
            n_vert = int(rng.integers(3, 6))
            angles = np.sort(rng.uniform(0, 2 * np.pi, n_vert))
            radii = rng.uniform(0.06, 0.14, n_vert)
            vx = cx + radii * np.cos(angles)
            vy = cy + radii * np.sin(angles)
            mask = _convex_polygon_mask(xx, yy, vx, vy)
        img = np.where(mask, shade, img)

    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5)
    texture /= max(np.abs(texture).max(), 1e-12)
    img = img + 0.03 * texture
    img = ndimage.gaussian_filter(img, 0.6)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _convex_polygon_mask(xx, yy, vx, vy) -> np.ndarray:
    # half-plane test against the convex hull of the vertices
    pts = np.stack([vx, vy], axis=1)
    hull = _convex_hull(pts)
    mask = np.ones(xx.shape, dtype=bool)
    n = len(hull)
    for i in range(n):
        x0, y0 = hull[i]
        x1, y1 = hull[(i + 1) % n]
        mask &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return mask


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull (monotone chain)."""
    pts = sorted(map(tuple, pts))
    if len(pts) <= 2:
        return np.asarray(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def modality_remap(img: np.ndarray, seed: int) -> np.ndarray:
    """Change the intensity relationship without moving any structure.

    Inversion followed by a two-band gamma curve (different exponents below
    and above a seed-dependent knee) and additive Gaussian noise (sigma
    0.015).  Pointwise apart from the noise, so edges keep their pixel
    coordinates.
    """
    rng = np.random.default_rng([seed, 0xC7])
    x = 1.0 - np.asarray(img, dtype=np.float64)
    knee = rng.uniform(0.35, 0.65)
    g_lo, g_hi = rng.uniform(0.6, 1.0), rng.uniform(1.0, 1.6)
    lo = knee * (np.clip(x, 0.0, knee) / knee) ** g_lo
    hi = knee + (1.0 - knee) * (np.clip(x - knee, 0.0, None) / (1.0 - knee)) ** g_hi
    x = np.where(x <= knee, lo, hi)
    x = x + rng.normal(0.0, 0.015, size=x.shape)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def generate_pair(seed: int, size: int = 84, pair_id: str | None = None) -> ImagePair:
    base = generate_base_image(seed, size)
    return ImagePair(fixed=quantize(base), moving_aligned=quantize(modality_remap(base, seed)),
                     id=pair_id if pair_id is not None else f"pair{seed:04d}")


def generate_dataset(n_pairs: int, size: int = 84, seed: int = 0) -> list[ImagePair]:
    return [generate_pair(seed * 1000 + i, size, pair_id=f"pair{i:03d}") for i in range(n_pairs)]


# --------------------------------------------------------------------------
# perturbations

@dataclass(frozen=True)
class PerturbationRange:
    """Inclusive (min, max, step) grids for every pose parameter."""
    tx: tuple[float, float, float] = (-25, 25, 1)
    ty: tuple[float, float, float] = (-25, 25, 1)
    angle: tuple[float, float, float] = (-30, 30, 1)
    scale: tuple[float, float, float] = (0.75, 1.25, SCALE_STEP)

    def __post_init__(self):
        for name in ("tx", "ty", "angle", "scale"):
            lo, hi, step = getattr(self, name)
            if lo > hi or step <= 0:
                raise ValueError(f"invalid {name} range {(lo, hi, step)}")

    def grid(self, name: str) -> np.ndarray:
        lo, hi, step = getattr(self, name)
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(n), 10)


FULL_E1 = PerturbationRange()
FULL_E2 = PerturbationRange(tx=(-30, 30, 1), ty=(-30, 30, 1), angle=(-45, 45, 1))
DESK_E1 = PerturbationRange(tx=(-10, 10, 1), ty=(-10, 10, 1), angle=(-10, 10, 1),
                            scale=(0.9, 1.1, SCALE_STEP))
DESK_E2 = PerturbationRange(tx=(-14, 14, 1), ty=(-14, 14, 1), angle=(-15, 15, 1),
                            scale=(0.9, 1.1, SCALE_STEP))
RANGES = {"full-E1": FULL_E1, "full-E2": FULL_E2, "E1": DESK_E1, "E2": DESK_E2}


def sample_perturbation(rng: np.random.Generator, prange: PerturbationRange = FULL_E1
                        ) -> SimilarityTransform:
    """Draw each parameter uniformly from its grid."""
    vals = {name: float(rng.choice(prange.grid(name))) for name in ("tx", "ty", "angle", "scale")}
    return SimilarityTransform(vals["tx"] + 0.0, vals["ty"] + 0.0, vals["scale"], vals["angle"])


def recovery_transform(perturb: SimilarityTransform) -> SimilarityTransform:
    """Ground-truth registration transform for a lattice perturbation."""
    return lattice_mirror(perturb)


def perturbation_warp(perturb: SimilarityTransform) -> SimilarityTransform:
    """The geometric warp applied to the aligned moving image.

    Defined as the inverse of :func:`recovery_transform`, so the ground truth
    lies exactly on the action lattice.  Equals ``perturb`` for pure
    translations and pure rotations.
    """
    return invert(recovery_transform(perturb))


def make_episode_pair(pair: ImagePair, perturb: SimilarityTransform
                      ) -> tuple[np.ndarray, np.ndarray]:
    return pair.fixed, warp_image(pair.moving_aligned, perturbation_warp(perturb))


# --------------------------------------------------------------------------
# persistence

def _write_pgm(path: Path, img: np.ndarray) -> None:
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="L").save(path, format="PPM")


def _read_pgm(path: Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"image file not found: {path}")
    try:
        with PILImage.open(path) as im:
            if im.format != "PPM" or im.mode != "L":
                raise CorruptFileError(f"{path}: not an 8-bit PGM (format={im.format}, mode={im.mode})")
            im.load()
            data = np.asarray(im, dtype=np.uint8)
    except DatasetError:
        raise
    except Exception as exc:  # PIL raises a zoo of types for bad headers/payloads
        raise CorruptFileError(f"{path}: {exc}") from exc
    if shape is not None and data.shape != tuple(shape):
        raise CorruptFileError(f"{path}: dimensions {data.shape} do not match manifest {shape}")
    return _from_uint8(data)


def save_dataset(pairs: list[ImagePair], manifest_path: str | os.PathLike, seed: int = 0) -> Path:
    """Write every pair as two PGM files next to a JSON manifest."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    root.mkdir(parents=True, exist_ok=True)
    ids = [p.id for p in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("pair ids must be unique")
    records = []
    for p in pairs:
        fixed_name, moving_name = f"{p.id}_fixed.pgm", f"{p.id}_moving.pgm"
        _write_pgm(root / fixed_name, p.fixed)
        _write_pgm(root / moving_name, p.moving_aligned)
        h, w = p.shape
        records.append({"id": p.id, "fixed": fixed_name, "moving": moving_name,
                        "width": w, "height": h})
    manifest = {"format_version": FORMAT_VERSION, "seed": seed, "pairs": records}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_dataset(manifest_path: str | os.PathLike) -> tuple[dict, list[ImagePair]]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        version = manifest["format_version"]
        records = manifest["pairs"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFileError(f"{manifest_path}: unreadable manifest ({exc})") from exc
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{manifest_path}: format_version {version}, "
                                   f"expected {FORMAT_VERSION}")
    root = manifest_path.parent
    pairs, seen = [], set()
    for rec in records:
        if rec["id"] in seen:
            raise CorruptFileError(f"{manifest_path}: duplicate pair id {rec['id']!r}")
        seen.add(rec["id"])
        shape = (int(rec["height"]), int(rec["width"]))
        pairs.append(ImagePair(fixed=_read_pgm(root / rec["fixed"], shape),
                               moving_aligned=_read_pgm(root / rec["moving"], shape),
                               id=rec["id"]))
    return manifest, pairs
