"""Bounded voting accumulator over the whole projective image plane.

Parameterization
----------------
A homogeneous image point ``(x, y, w)`` with ``w >= 0`` is first normalized
by the image half-extent ``s`` to ``(X, Y, W) = (x / s, y / s, w)`` and then
mapped to the diamond ``|a| + |b| <= 1`` by

    (a, b) = (X, Y) / (|X| + |Y| + W)

with inverse ``(X, Y, W) = (a, b, 1 - |a| - |b|)``. Finite points land inside
the diamond, ideal points on its boundary, antipodal boundary points being
the same ideal point. Inside the quadrant ``(sign a, sign b) = (sx, sy)`` the
image line ``l_a X + l_b Y + l_c W = 0`` becomes the straight line

    (l_a - l_c sx) A + (l_b - l_c sy) B + l_c = 0

so every image line maps to a polyline of at most three segments, one per
quadrant triangle it crosses.

Votes are rasterized Wu-style: one sample per cell along the major axis with
the weight split between the two nearest cells across it. Weights and split
fractions are quantized to multiples of 2**-10 so each contribution is a
dyadic rational and every sum is exact in float64; accumulation order and
sharding therefore never change a cell value.
"""

from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np
from loguru import logger

from src.core.camera import ImagePoint
from src.core.errors import AllMasked, EmptyAccumulator
from src.core.lines import LineObservation
from src.utils.constants import LOW_CONFIDENCE_SCORE_RATIO

# Predicate over homogeneous centered image points (N, 3), w >= 0
Mask = Callable[[np.ndarray], np.ndarray]

_QUANTUM = 1024.0


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(values * _QUANTUM) / _QUANTUM


def to_diamond(points: np.ndarray, normalization: float) -> np.ndarray:
    """Map homogeneous centered image points ``(N, 3)`` to diamond ``(N, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    pts[pts[:, 2] < 0] *= -1.0
    X = pts[:, 0] / normalization
    Y = pts[:, 1] / normalization
    denom = np.abs(X) + np.abs(Y) + pts[:, 2]
    if np.any(denom == 0):
        raise ValueError("the null vector is not a projective point")
    return np.column_stack([X / denom, Y / denom])


def from_diamond(ab: np.ndarray, normalization: float) -> np.ndarray:
    """Map diamond points ``(N, 2)`` back to homogeneous image points.

    Points outside the closed diamond are pulled onto its boundary.
    """
    ab = np.atleast_2d(np.asarray(ab, dtype=float)).copy()
    l1 = np.abs(ab).sum(axis=1)
    outside = l1 > 1.0
    ab[outside] /= l1[outside, None]
    w = np.clip(1.0 - np.abs(ab).sum(axis=1), 0.0, None)
    return np.column_stack([ab[:, 0] * normalization, ab[:, 1] * normalization, w])


def line_to_diamond_segments(
    line: LineObservation, normalization: float
) -> list[tuple[float, float, float, float]]:
    """Polyline image of a line in diamond space as ``(a0, b0, a1, b1)`` tuples."""
    la = line.a * normalization
    lb = line.b * normalization
    lc = line.c
    segments: list[tuple[float, float, float, float]] = []
    seen: set[tuple[float, ...]] = set()
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            alpha = la - lc * sx
            beta = lb - lc * sy
            tri = ((0.0, 0.0), (sx, 0.0), (0.0, sy))
            g = [alpha * p[0] + beta * p[1] + lc for p in tri]
            hits: list[tuple[float, float]] = []
            for k in range(3):
                p0, p1 = tri[k], tri[(k + 1) % 3]
                g0, g1 = g[k], g[(k + 1) % 3]
                if g0 == 0.0:
                    hits.append(p0)
                if g0 * g1 < 0.0:
                    t = g0 / (g0 - g1)
                    hits.append(
                        (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))
                    )
            unique: list[tuple[float, float]] = []
            for h in hits:
                if all(abs(h[0] - q[0]) + abs(h[1] - q[1]) > 1e-12 for q in unique):
                    unique.append(h)
            if len(unique) < 2:
                continue
            # Two extreme hits; more only occurs when the line runs along an edge
            best = max(
                ((p, q) for i, p in enumerate(unique) for q in unique[i + 1 :]),
                key=lambda pq: abs(pq[0][0] - pq[1][0]) + abs(pq[0][1] - pq[1][1]),
            )
            p, q = sorted(best)
            key = tuple(round(v, 12) for v in (*p, *q))
            if key in seen:
                continue
            seen.add(key)
            segments.append((p[0], p[1], q[0], q[1]))
    return segments


@dataclass(frozen=True)
class DiamondMaximum:
    """Refined accumulator maximum.

    Attributes:
        point: Homogeneous centered image point ``(x, y, w)``, ``w >= 0``.
        score: Vote mass of the maximal cell.
        score_ratio: Score over the median non-zero cell.
        cell: ``(row, col)`` of the maximal cell.
        diamond: Refined ``(a, b)`` position.
    """

    point: tuple[float, float, float]
    score: float
    score_ratio: float
    cell: tuple[int, int]
    diamond: tuple[float, float]

    @property
    def low_confidence(self) -> bool:
        return self.score_ratio < LOW_CONFIDENCE_SCORE_RATIO

    @property
    def is_ideal(self) -> bool:
        return self.point[2] <= 1e-12

    def image_point(self) -> ImagePoint:
        x, y, w = self.point
        if w <= 1e-12:
            raise ValueError("maximum is an ideal point")
        return ImagePoint(x / w, y / w)


class DiamondSpace:
    """Accumulator grid over a rectangle of diamond coordinates.

    The default rectangle is the full ``[-1, 1]^2`` square holding the
    diamond; :meth:`window` builds finer sub-accumulators around a cell.
    Rows index ``b``, columns index ``a``.
    """

    def __init__(
        self,
        resolution: int,
        normalization: float,
        bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0),
    ) -> None:
        if resolution < 3 or resolution % 2 == 0:
            raise ValueError(
                f"resolution must be an odd integer >= 3, got {resolution}"
            )
        if not normalization > 0:
            raise ValueError(f"normalization must be positive, got {normalization}")
        self.resolution = resolution
        self.normalization = float(normalization)
        self.bounds = bounds
        self.grid = np.zeros((resolution, resolution), dtype=np.float64)
        self.line_count = 0

    @classmethod
    def for_image(
        cls, resolution: int, image_size: tuple[int, int]
    ) -> "DiamondSpace":
        return cls(resolution, max(image_size) / 2.0)

    @property
    def cell_size(self) -> tuple[float, float]:
        a_min, a_max, b_min, b_max = self.bounds
        return (a_max - a_min) / self.resolution, (b_max - b_min) / self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Diamond coordinates of column centers (a) and row centers (b)."""
        a_min, _, b_min, _ = self.bounds
        da, db = self.cell_size
        idx = np.arange(self.resolution) + 0.5
        return a_min + idx * da, b_min + idx * db

    def cell_of(self, ab: tuple[float, float]) -> tuple[int, int]:
        a_min, _, b_min, _ = self.bounds
        da, db = self.cell_size
        col = int(np.clip(np.floor((ab[0] - a_min) / da), 0, self.resolution - 1))
        row = int(np.clip(np.floor((ab[1] - b_min) / db), 0, self.resolution - 1))
        return row, col

    def window(
        self, cell: tuple[int, int], half_cells: int, refinement: int
    ) -> "DiamondSpace":
        """Finer accumulator over ``2 * half_cells + 1`` cells around ``cell``."""
        a_centers, b_centers = self.cell_centers()
        a_c, b_c = a_centers[cell[1]], b_centers[cell[0]]
        da, db = self.cell_size
        n = refinement * (2 * half_cells + 1) + 1
        fa, fb = da / refinement, db / refinement
        bounds = (
            a_c - n * fa / 2,
            a_c + n * fa / 2,
            b_c - n * fb / 2,
            b_c + n * fb / 2,
        )
        return DiamondSpace(n, self.normalization, bounds)

    def accumulate_line(self, line: LineObservation) -> None:
        self.accumulate_lines([line])

    def accumulate_lines(self, lines: Iterable[LineObservation]) -> None:
        """Add every line's rasterized polyline, weighted by its weight."""
        rows: list[tuple[float, float, float, float, float]] = []
        count = 0
        for line in lines:
            count += 1
            if line.weight == 0:
                continue
            for seg in line_to_diamond_segments(line, self.normalization):
                rows.append((*seg, line.weight))
        self.line_count += count
        if not rows:
            return
        segs = np.asarray(rows, dtype=float)
        flat, weights = self._rasterize(segs)
        if flat.size:
            self.grid += np.bincount(
                flat, weights=weights, minlength=self.grid.size
            ).reshape(self.grid.shape)
        logger.trace(f"Accumulated {count} line(s) as {len(rows)} segment(s)")

    def _rasterize(self, segs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a_min, _, b_min, _ = self.bounds
        da, db = self.cell_size
        n = self.resolution
        # Continuous cell coordinates, cell centers at integers
        u0 = (segs[:, 0] - a_min) / da - 0.5
        v0 = (segs[:, 1] - b_min) / db - 0.5
        u1 = (segs[:, 2] - a_min) / da - 0.5
        v1 = (segs[:, 3] - b_min) / db - 0.5
        w = _quantize(segs[:, 4])
        x_major = np.abs(u1 - u0) >= np.abs(v1 - v0)

        flats: list[np.ndarray] = []
        weights: list[np.ndarray] = []
        for swap, p0, q0, p1, q1 in (
            (False, u0, v0, u1, v1),
            (True, v0, u0, v1, u1),
        ):
            major = ~x_major if swap else x_major
            if not major.any():
                continue
            p0, q0, p1, q1, wm = p0[major], q0[major], p1[major], q1[major], w[major]
            pmin = np.maximum(np.minimum(p0, p1), -0.5)
            pmax = np.minimum(np.maximum(p0, p1), n - 0.5)
            keep = pmin <= pmax
            if not keep.any():
                continue
            p0, q0, p1, q1, wm = p0[keep], q0[keep], p1[keep], q1[keep], wm[keep]
            pmin, pmax = pmin[keep], pmax[keep]
            i0 = np.floor(pmin + 0.5).astype(np.int64)
            i1 = np.floor(pmax + 0.5).astype(np.int64)
            counts = i1 - i0 + 1
            seg_idx = np.repeat(np.arange(len(counts)), counts)
            starts = np.repeat(np.cumsum(counts) - counts, counts)
            major_idx = i0[seg_idx] + (np.arange(counts.sum()) - starts)
            p_at = np.clip(major_idx, pmin[seg_idx], pmax[seg_idx])
            dp = p1 - p0
            slope = np.divide(q1 - q0, dp, out=np.zeros_like(dp), where=dp != 0)
            q_at = q0[seg_idx] + (p_at - p0[seg_idx]) * slope[seg_idx]
            lower = np.floor(q_at).astype(np.int64)
            frac = _quantize(q_at - lower)
            wq = wm[seg_idx]
            for minor_idx, part in ((lower, wq * (1.0 - frac)), (lower + 1, wq * frac)):
                valid = (
                    (major_idx >= 0)
                    & (major_idx < n)
                    & (minor_idx >= 0)
                    & (minor_idx < n)
                    & (part > 0)
                )
                if not swap:
                    flat = minor_idx[valid] * n + major_idx[valid]
                else:
                    flat = major_idx[valid] * n + minor_idx[valid]
                flats.append(flat)
                weights.append(part[valid])
        if not flats:
            return np.empty(0, dtype=np.int64), np.empty(0)
        return np.concatenate(flats), np.concatenate(weights)

    def merge(self, other: "DiamondSpace") -> "DiamondSpace":
        """Cell-wise sum of two accumulators over the same rectangle."""
        if (
            other.resolution != self.resolution
            or other.bounds != self.bounds
            or other.normalization != self.normalization
        ):
            raise ValueError("cannot merge accumulators with different geometry")
        merged = DiamondSpace(self.resolution, self.normalization, self.bounds)
        merged.grid = self.grid + other.grid
        merged.line_count = self.line_count + other.line_count
        return merged

    def _allowed(self, mask: Mask | None) -> np.ndarray:
        a_c, b_c = self.cell_centers()
        A, B = np.meshgrid(a_c, b_c)
        ab = np.column_stack([A.ravel(), B.ravel()])
        points = from_diamond(ab, self.normalization)
        if mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return np.asarray(mask(points), dtype=bool).reshape(self.grid.shape)

    def find_maximum(self, mask: Mask | None = None) -> DiamondMaximum:
        """Refined position of the strongest allowed cell.

        Ties go to the smallest row-major index. The refined position is the
        vote-weighted center of mass of the 3x3 neighborhood.

        Raises:
            EmptyAccumulator: If nothing was accumulated.
            AllMasked: If no allowed cell holds votes.
        """
        if not np.any(self.grid > 0):
            raise EmptyAccumulator("diamond space holds no votes")
        allowed = self._allowed(mask)
        masked = np.where(allowed, self.grid, 0.0)
        if not np.any(masked > 0):
            raise AllMasked("every voted cell is excluded by the mask")

        flat = int(np.argmax(masked))
        row, col = divmod(flat, self.resolution)
        score = float(masked[row, col])

        r0, r1 = max(row - 1, 0), min(row + 2, self.resolution)
        c0, c1 = max(col - 1, 0), min(col + 2, self.resolution)
        patch = masked[r0:r1, c0:c1]
        a_c, b_c = self.cell_centers()
        total = float(patch.sum())
        a = float((patch.sum(axis=0) * a_c[c0:c1]).sum() / total)
        b = float((patch.sum(axis=1) * b_c[r0:r1]).sum() / total)
        point = from_diamond(np.array([[a, b]]), self.normalization)[0]

        nonzero = self.grid[self.grid > 0]
        ratio = score / float(np.median(nonzero))
        logger.debug(
            f"Diamond maximum at cell ({row}, {col}), score {score:.3f}, "
            f"ratio {ratio:.2f}"
        )
        return DiamondMaximum(
            point=(float(point[0]), float(point[1]), float(point[2])),
            score=score,
            score_ratio=ratio,
            cell=(row, col),
            diamond=(a, b),
        )

    def to_uint16(self) -> np.ndarray:
        """Grid scaled to the full 16-bit range for inspection dumps."""
        peak = float(self.grid.max())
        if peak <= 0:
            return np.zeros(self.grid.shape, dtype=np.uint16)
        return np.round(self.grid / peak * 65535.0).astype(np.uint16)
