"""Scenes, point annotations, ground-truth maps, synthetic data and augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .ops import interp_matrix

STRIDE = 8  # model output cell size in input pixels


class PointAnnotation(NamedTuple):
    x: float
    y: float


@dataclass
class Scene:
    image: np.ndarray  # [3, H, W], values in [0, 1]
    points: list[PointAnnotation] = field(default_factory=list)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"scene image must be [3,H,W], got {self.image.shape}")
        H, W = self.image.shape[1:]
        if H % STRIDE or W % STRIDE:
            raise ValueError(f"scene size {H}x{W} must be divisible by {STRIDE}")
        self.points = [PointAnnotation(float(x), float(y)) for x, y in self.points]

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    @property
    def count(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def _axis_profile(n_cells: int, centre: float, sigma: float, truncate: float) -> np.ndarray:
    d = (np.arange(n_cells) + 0.5) - centre
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k[np.abs(d) > truncate * sigma] = 0.0
    return k


def gaussian_point_map(
    points: Sequence[PointAnnotation],
    height: int,
    width: int,
    sigma: float,
    truncate: float = 4.0,
) -> np.ndarray:
    """[1, height/8, width/8] map where every point deposits unit mass.

    Each point gets a separable Gaussian in cell units centred at (x/8, y/8),
    cut off beyond ``truncate`` sigmas and normalised over the cells that
    fall inside the grid.  Normalising with ``math.fsum`` keeps the result
    independent of summation order, so mirrored scenes give mirrored maps
    bit for bit.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = height // STRIDE, width // STRIDE
    grid = np.zeros((h, w))
    for x, y in points:
        kx = _axis_profile(w, x / STRIDE, sigma, truncate)
        ky = _axis_profile(h, y / STRIDE, sigma, truncate)
        sx, sy = math.fsum(kx), math.fsum(ky)
        if sx == 0.0 or sy == 0.0:
            continue
        grid += np.outer(ky / sy, kx / sx)
    return grid[None]


def generate_density_gt(scene: Scene, sigma: float = 4.0) -> np.ndarray:
    return gaussian_point_map(scene.points, scene.height, scene.width, sigma)


def generate_localization_gt(scene: Scene, sigma_loc: float = 1.0) -> np.ndarray:
    return gaussian_point_map(scene.points, scene.height, scene.width, sigma_loc)


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    count_range: tuple[int, int] = (5, 30)
    blob_radius_range: tuple[float, float] = (1.5, 4.0)
    margin: float = 0.0  # keep centres this many pixels away from every border
    quantum: float = 0.25  # centres snap to this pixel fraction


def synth_scene(seed: int, config: SynthConfig = SynthConfig()) -> Scene:
    """Dark elliptical "heads" on a smooth textured background.

    Blob size grows towards the bottom of the frame to mimic perspective.
    """
    H, W = config.height, config.width
    lo, hi = config.count_range
    r_lo, r_hi = config.blob_radius_range
    if lo < 0 or hi < lo or r_lo <= 0 or r_hi < r_lo:
        raise ValueError("invalid synth ranges")
    if 2 * config.margin >= min(H, W):
        raise ValueError("margin leaves no room for points")
    rng = np.random.default_rng(seed)

    coarse = rng.uniform(0.0, 1.0, size=(3, 5, 5))
    smooth = interp_matrix(5, H) @ coarse @ interp_matrix(5, W).T
    image = 0.55 + 0.25 * smooth + 0.04 * rng.standard_normal((3, H, W))
    image += 0.1 * np.linspace(-1.0, 1.0, H)[None, :, None]

    count = int(rng.integers(lo, hi + 1))
    q = config.quantum
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    points = []
    for _ in range(count):
        x = np.floor(rng.uniform(config.margin, W - config.margin) / q) * q
        y = np.floor(rng.uniform(config.margin, H - config.margin) / q) * q
        # staying inside [q, W - q] keeps mirrored points in bounds too
        x, y = min(max(x, q), W - q), min(max(y, q), H - q)
        radius = (r_lo + (r_hi - r_lo) * y / H) * rng.uniform(0.85, 1.15)
        rx, ry = radius, radius * rng.uniform(1.1, 1.4)
        dist2 = ((xx - x) / rx) ** 2 + ((yy - y) / ry) ** 2
        mask = np.exp(-(dist2**2))
        tint = rng.uniform(0.05, 0.25, size=(3, 1, 1))
        image = image * (1.0 - mask) + tint * mask
        points.append(PointAnnotation(float(x), float(y)))
    return Scene(np.clip(image, 0.0, 1.0), points)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def flip_scene(scene: Scene) -> Scene:
    W = scene.width
    return Scene(
        np.ascontiguousarray(scene.image[:, :, ::-1]),
        [PointAnnotation(W - p.x, p.y) for p in scene.points],
    )


def flip_map(grid: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(grid[..., ::-1])


def crop_scene(scene: Scene, top: int, left: int, size: int) -> Scene:
    image = scene.image[:, top : top + size, left : left + size].copy()
    points = [
        PointAnnotation(p.x - left, p.y - top)
        for p in scene.points
        if left <= p.x < left + size and top <= p.y < top + size
    ]
    return Scene(image, points)


def augment(
    scene: Scene,
    gt_d: np.ndarray,
    gt_l: np.ndarray,
    crop: int,
    seed,
    flip: Optional[bool] = None,
) -> tuple[Scene, np.ndarray, np.ndarray]:
    """Random 8-pixel-aligned square crop plus a coin-flip horizontal mirror.

    ``flip`` forces the mirror decision; the random stream is consumed either way.
    """
    H, W = scene.height, scene.width
    if crop > min(H, W):
        raise ValueError(f"crop {crop} exceeds scene size {H}x{W}")
    if crop % STRIDE or crop <= 0:
        raise ValueError(f"crop {crop} must be a positive multiple of {STRIDE}")
    rng = np.random.default_rng(seed)
    top = STRIDE * int(rng.integers(0, (H - crop) // STRIDE + 1))
    left = STRIDE * int(rng.integers(0, (W - crop) // STRIDE + 1))
    coin = bool(rng.random() < 0.5)
    do_flip = coin if flip is None else flip

    out = crop_scene(scene, top, left, crop)
    c0, r0, n = left // STRIDE, top // STRIDE, crop // STRIDE
    d = gt_d[:, r0 : r0 + n, c0 : c0 + n].copy()
    l = gt_l[:, r0 : r0 + n, c0 : c0 + n].copy()
    if do_flip:
        out, d, l = flip_scene(out), flip_map(d), flip_map(l)
    return out, d, l
