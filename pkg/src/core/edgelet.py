"""Oriented edge samples from gradient-magnitude local maxima."""

import math
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.ndimage import maximum_filter

from src.core.camera import ImagePoint
from src.core.errors import DegeneratePatch
from src.utils.constants import (
    DEGENERATE_PATCH_ENERGY,
    EDGELET_PATCH_RADIUS,
    KEEP_FRACTION,
    MIN_IMAGE_SIZE,
    SEED_THRESHOLD_FRACTION,
    VP1_EXCLUSION_DEG,
)


@dataclass(frozen=True)
class RasterImage:
    """Grayscale frame with intensities in [0, 1] and an optional foreground mask."""

    samples: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.samples.ndim != 2:
            raise ValueError(f"expected a 2D image, got shape {self.samples.shape}")
        h, w = self.samples.shape
        if h < MIN_IMAGE_SIZE or w < MIN_IMAGE_SIZE:
            raise ValueError(f"image {w}x{h} is smaller than {MIN_IMAGE_SIZE}px")
        if self.mask is not None and self.mask.shape != self.samples.shape:
            raise ValueError("mask does not match image dimensions")

    @property
    def width(self) -> int:
        return int(self.samples.shape[1])

    @property
    def height(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class GradientField:
    dx: np.ndarray
    dy: np.ndarray
    magnitude: np.ndarray

    @property
    def size(self) -> tuple[int, int]:
        return int(self.magnitude.shape[1]), int(self.magnitude.shape[0])


@dataclass(frozen=True)
class Edgelet:
    """Seed in centered coordinates, unit direction and anisotropy ratio."""

    seed: ImagePoint
    direction: tuple[float, float]
    quality: float


def gradient_field(img: RasterImage) -> GradientField:
    """Central differences inside the image, one-sided at the borders."""
    samples = np.asarray(img.samples, dtype=float)
    dy, dx = np.gradient(samples)
    return GradientField(dx=dx, dy=dy, magnitude=np.hypot(dx, dy))


# Pixel steps (dx, dy) for gradient angles in multiples of 45 degrees
_GRADIENT_STEPS = np.array(
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)],
    dtype=np.int64,
)


def detect_seeds(
    grad: GradientField,
    mask: np.ndarray | None = None,
    threshold: float | None = None,
) -> np.ndarray:
    """Pixel positions ``(N, 2)`` as ``(x, y)`` of gradient-magnitude maxima.

    A seed is at least as strong as its whole 3x3 neighborhood and strictly
    stronger than the neighbor behind it along the gradient, so a flat
    plateau yields nothing and a two-pixel ridge keeps its darker column.
    Seeds also exceed ``threshold`` (default a tenth of the frame's peak
    magnitude) and keep the 9x9 patch inside the image.
    """
    mag = grad.magnitude
    peak = float(mag.max()) if mag.size else 0.0
    if threshold is None:
        threshold = SEED_THRESHOLD_FRACTION * peak
    if peak <= 0:
        return np.empty((0, 2), dtype=np.int64)
    if not threshold > 0:
        raise ValueError(f"seed threshold must be positive, got {threshold}")

    candidates = (mag == maximum_filter(mag, size=3, mode="nearest")) & (
        mag > threshold
    )
    r = EDGELET_PATCH_RADIUS
    border = np.zeros_like(candidates)
    border[r:-r, r:-r] = True
    candidates &= border
    if mask is not None:
        candidates &= mask.astype(bool)
    ys, xs = np.nonzero(candidates)
    if len(xs):
        angle = np.arctan2(grad.dy[ys, xs], grad.dx[ys, xs])
        k = np.rint(angle / (np.pi / 4)).astype(np.int64) % 8
        behind = mag[ys - _GRADIENT_STEPS[k, 1], xs - _GRADIENT_STEPS[k, 0]]
        strict = mag[ys, xs] > behind
        ys, xs = ys[strict], xs[strict]
    return np.column_stack([xs, ys]).astype(np.int64)


def _patch_offsets() -> tuple[np.ndarray, np.ndarray]:
    r = EDGELET_PATCH_RADIUS
    oy, ox = np.mgrid[-r : r + 1, -r : r + 1]
    return ox.ravel().astype(np.int64), oy.ravel().astype(np.int64)


_OFFSETS_X, _OFFSETS_Y = _patch_offsets()


def principal_axes(
    sxx: np.ndarray, sxy: np.ndarray, syy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form eigen decomposition of symmetric 2x2 matrices.

    Returns:
        ``(lambda1, lambda2, direction)`` with ``lambda1 >= lambda2`` and the
        unit eigenvector of ``lambda1`` oriented so that ``d_y >= 0``.
    """
    half_tr = 0.5 * (sxx + syy)
    disc = np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy**2)
    lam1 = half_tr + disc
    lam2 = half_tr - disc

    use_first = sxx >= syy
    vx = np.where(use_first, lam1 - syy, sxy)
    vy = np.where(use_first, sxy, lam1 - sxx)
    norm = np.hypot(vx, vy)
    isotropic = norm == 0
    vx = np.where(isotropic, np.where(use_first, 1.0, 0.0), vx)
    vy = np.where(isotropic, np.where(use_first, 0.0, 1.0), vy)
    norm = np.hypot(vx, vy)
    vx, vy = vx / norm, vy / norm
    flip = (vy < 0) | ((vy == 0) & (vx < 0))
    vx = np.where(flip, -vx, vx)
    vy = np.where(flip, -vy, vy)
    return lam1, lam2, np.column_stack([vx, vy])


def edgelets_from_seeds(
    grad: GradientField, seeds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch edgelet fit for pixel seeds ``(N, 2)``.

    Returns:
        ``(directions (N, 2), qualities (N,), valid (N,))``; ``valid`` is False
        for patches without gradient energy.
    """
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    if len(seeds) == 0:
        return np.empty((0, 2)), np.empty(0), np.empty(0, dtype=bool)
    xs = seeds[:, 0:1] + _OFFSETS_X[None, :]
    ys = seeds[:, 1:2] + _OFFSETS_Y[None, :]
    w2 = grad.magnitude[ys, xs] ** 2
    ox = _OFFSETS_X[None, :].astype(float)
    oy = _OFFSETS_Y[None, :].astype(float)
    sxx = (w2 * ox * ox).sum(axis=1)
    sxy = (w2 * ox * oy).sum(axis=1)
    syy = (w2 * oy * oy).sum(axis=1)
    lam1, lam2, directions = principal_axes(sxx, sxy, syy)
    valid = lam1 >= DEGENERATE_PATCH_ENERGY
    quality = lam1 / np.maximum(lam2, DEGENERATE_PATCH_ENERGY * lam1)
    quality = np.where(valid, quality, 1.0)
    return directions, quality, valid


def edgelet_at(grad: GradientField, seed: tuple[int, int]) -> Edgelet:
    """Fit one edgelet around pixel ``seed = (x, y)``.

    Raises:
        DegeneratePatch: If the patch has no gradient energy.
        ValueError: If the 9x9 patch leaves the image.
    """
    x, y = int(seed[0]), int(seed[1])
    width, height = grad.size
    r = EDGELET_PATCH_RADIUS
    if not (r <= x < width - r and r <= y < height - r):
        raise ValueError(f"patch around ({x}, {y}) leaves the {width}x{height} image")
    directions, quality, valid = edgelets_from_seeds(grad, np.array([[x, y]]))
    if not valid[0]:
        raise DegeneratePatch(f"no gradient energy around ({x}, {y})")
    return Edgelet(
        seed=ImagePoint.from_pixel(x, y, (width, height)),
        direction=(float(directions[0, 0]), float(directions[0, 1])),
        quality=float(quality[0]),
    )


def _frame_edgelets(
    img: RasterImage,
    vp1: ImagePoint | None,
    exclusion_deg: float,
    threshold_fraction: float,
) -> list[Edgelet]:
    grad = gradient_field(img)
    peak = float(grad.magnitude.max())
    if peak <= 0:
        return []
    seeds = detect_seeds(grad, img.mask, threshold_fraction * peak)
    directions, quality, valid = edgelets_from_seeds(grad, seeds)
    size = (img.width, img.height)
    centered = seeds[valid].astype(float) - np.array([size[0] / 2.0, size[1] / 2.0])
    directions, quality = directions[valid], quality[valid]

    keep = np.ones(len(centered), dtype=bool)
    if vp1 is not None and exclusion_deg > 0:
        to_vp = vp1.as_array()[None, :] - centered
        dist = np.linalg.norm(to_vp, axis=1)
        cos = np.abs((to_vp * directions).sum(axis=1)) / np.maximum(dist, 1e-12)
        keep = (dist > 0) & (cos < math.cos(math.radians(exclusion_deg)))

    return [
        Edgelet(
            seed=ImagePoint(float(c[0]), float(c[1])),
            direction=(float(d[0]), float(d[1])),
            quality=float(q),
        )
        for c, d, q in zip(centered[keep], directions[keep], quality[keep])
    ]


def collect_edgelets(
    frames: Iterable[RasterImage],
    vp1: ImagePoint | None,
    keep_fraction: float = KEEP_FRACTION,
    vp1_exclusion_angle: float = VP1_EXCLUSION_DEG,
    threshold_fraction: float = SEED_THRESHOLD_FRACTION,
    workers: int = 1,
) -> list[Edgelet]:
    """Edgelets of every frame minus those aimed at VP1, strongest fraction kept.

    Frames are processed concurrently; the result is sorted by decreasing
    quality, then seed ``y``, then seed ``x``, so it never depends on the
    worker count.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    frames = list(frames)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_frame = list(
            pool.map(
                lambda img: _frame_edgelets(
                    img, vp1, vp1_exclusion_angle, threshold_fraction
                ),
                frames,
            )
        )
    found = [e for batch in per_frame for e in batch]
    found.sort(key=lambda e: (-e.quality, e.seed.y, e.seed.x, e.direction))
    kept = found[: math.ceil(keep_fraction * len(found))]
    logger.info(
        f"Collected {len(found)} edgelets from {len(frames)} frame(s), "
        f"kept {len(kept)}"
    )
    return kept
