"""Reference keypoints (Harris corners or a fixed grid) and the mean landmark
distance that drives the reward."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import SimilarityTransform, apply_points

MIN_LANDMARKS = 4
HARRIS_K = 0.04


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray          # (N, 2) as (x, y)
    source: str                 # "detected" | "grid"
    responses: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points)


def harris_response(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    smooth = ndimage.gaussian_filter(img, sigma)
    ix = ndimage.sobel(smooth, axis=1)
    iy = ndimage.sobel(smooth, axis=0)
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


def grid_landmarks(width: int, height: int, n_per_side: int = 4) -> LandmarkSet:
    """``n_per_side**2`` points on a lattice inset 10% from every border."""
    if n_per_side < 2:
        raise ValueError("n_per_side must be >= 2")
    xs = np.linspace(0.1 * width, 0.9 * width, n_per_side)
    ys = np.linspace(0.1 * height, 0.9 * height, n_per_side)
    gx, gy = np.meshgrid(xs, ys)
    return LandmarkSet(np.stack([gx.ravel(), gy.ravel()], axis=1), "grid")


def detect_landmarks(img: np.ndarray, k: int = 16, min_distance: float = 5.0,
                     rel_threshold: float = 0.01, border: int = 2) -> LandmarkSet:
    """Up to ``k`` Harris maxima, strongest first, at least ``min_distance`` apart.

    Falls back to a grid when fewer than four corners survive.
    """
    if k < MIN_LANDMARKS:
        raise ValueError(f"k must be >= {MIN_LANDMARKS}")
    img = np.asarray(img)
    h, w = img.shape
    resp = harris_response(img)
    peak = resp.max()
    if peak > 1e-12:
        local_max = resp == ndimage.maximum_filter(resp, size=3, mode="constant", cval=-np.inf)
        cand = local_max & (resp > rel_threshold * peak)
        cand[:border] = cand[-border:] = False
        cand[:, :border] = cand[:, -border:] = False
        ys, xs = np.nonzero(cand)
        vals = resp[ys, xs]
        # stable sort keeps raster order among equal responses
        order = np.argsort(-vals, kind="stable")
        chosen: list[int] = []
        min_d2 = min_distance * min_distance
        for i in order:
            if all((xs[i] - xs[j]) ** 2 + (ys[i] - ys[j]) ** 2 >= min_d2 for j in chosen):
                chosen.append(i)
                if len(chosen) == k:
                    break
        if len(chosen) >= MIN_LANDMARKS:
            pts = np.stack([xs[chosen], ys[chosen]], axis=1).astype(np.float64)
            return LandmarkSet(pts, "detected", vals[chosen])
    return grid_landmarks(w, h, max(2, math.isqrt(k)))


def landmarks_for(img: np.ndarray, provider: str = "detected", k: int = 16) -> LandmarkSet:
    if provider == "detected":
        return detect_landmarks(img, k)
    if provider == "grid":
        h, w = img.shape
        return grid_landmarks(w, h, max(2, math.isqrt(k)))
    raise ValueError(f"unknown landmark provider {provider!r}")


def mean_landmark_distance(ref: LandmarkSet | np.ndarray, warped: LandmarkSet | np.ndarray,
                           t: SimilarityTransform,
                           center: tuple[float, float] = (0.0, 0.0)) -> float:
    """Mean Euclidean distance between ``ref`` and ``warped`` mapped back by ``t``."""
    p = ref.points if isinstance(ref, LandmarkSet) else np.asarray(ref, dtype=np.float64)
    q = warped.points if isinstance(warped, LandmarkSet) else np.asarray(warped, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"landmark sets differ in size: {p.shape} vs {q.shape}")
    back = apply_points(t, q, center)
    return float(np.mean(np.hypot(*(p - back).T)))
