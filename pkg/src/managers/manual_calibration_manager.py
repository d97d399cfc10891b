"""Supervised calibration baselines from hand-marked road geometry."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from loguru import logger

from src.core.camera import (
    CameraCalibration,
    ImagePoint,
    calibration_from_vps,
    project_to_road,
)
from src.core.errors import (
    EmptyFeasibleGrid,
    EmptyMarkings,
    EmptyMatches,
    ParallelLines,
)
from src.core.lines import LineObservation
from src.core.markings import GroundTruthMarking, MeasuredSegment
from src.managers.settings_manager import SettingsManager
from src.utils.constants import HORIZON_EPSILON

_CHUNK = 4096


def vp_least_squares(lines: Sequence[tuple[ImagePoint, ImagePoint]]) -> ImagePoint:
    """Point minimizing the summed squared distances to the marked lines.

    Raises:
        ParallelLines: If the lines do not determine a point.
    """
    if len(lines) < 2:
        raise ParallelLines(f"need at least two lines, got {len(lines)}")
    obs = [LineObservation.through(p, q) for p, q in lines]
    A = np.array([[o.a, o.b] for o in obs])
    rhs = -np.array([o.c for o in obs])
    solution, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < 2:
        raise ParallelLines("marked lines are parallel")
    return ImagePoint(float(solution[0]), float(solution[1]))


def manual_scale(
    calib: CameraCalibration, segments: Sequence[MeasuredSegment]
) -> float:
    """Mean ratio of measured meters to road-plane length over the segments.

    Raises:
        EmptyMarkings: Without segments.
        HorizonPoint: If an endpoint cannot be projected.
    """
    if not segments:
        raise EmptyMarkings("no measured segments for the scale")
    ratios = []
    for seg in segments:
        P1 = project_to_road(seg.p1, calib).as_array()
        P2 = project_to_road(seg.p2, calib).as_array()
        ratios.append(seg.meters / float(np.linalg.norm(P1 - P2)))
    return float(np.mean(ratios))


def speed_scale(measured: Sequence[float], truth: Sequence[float]) -> float:
    """Mean ratio of true speeds to speeds measured with unit scale.

    This is the best scale any method could reach for a given calibration.

    Raises:
        EmptyMatches: Without matched pairs.
    """
    if len(measured) == 0:
        raise EmptyMatches("no matched speeds to derive a scale from")
    v = np.asarray(measured, dtype=float)
    gt = np.asarray(truth, dtype=float)
    if v.shape != gt.shape:
        raise ValueError("measured and true speeds differ in length")
    if np.any(v <= 0):
        raise ValueError("measured speeds must be positive")
    return float(np.mean(gt / v))


def _segment_arrays(segments: Sequence[MeasuredSegment]) -> tuple[np.ndarray, ...]:
    p1 = np.array([[s.p1.x, s.p1.y] for s in segments], dtype=float).reshape(-1, 2)
    p2 = np.array([[s.p2.x, s.p2.y] for s in segments], dtype=float).reshape(-1, 2)
    meters = np.array([s.meters for s in segments], dtype=float)
    return p1, p2, meters


def _road_lengths(
    u: ImagePoint, vs: np.ndarray, p1: np.ndarray, p2: np.ndarray
) -> np.ndarray:
    """Road-plane lengths ``(K, M)`` of segments for ``K`` candidate VP2s.

    Entries are NaN where an endpoint does not reach the road.
    """
    f = np.sqrt(-(u.x * vs[:, 0] + u.y * vs[:, 1]))
    U = np.column_stack([np.full(len(vs), u.x), np.full(len(vs), u.y), f])
    V = np.column_stack([vs, f])
    n = np.cross(U, V)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = (n[:, 1] > 0) | ((n[:, 1] == 0) & (n[:, 0] > 0))
    n[flip] *= -1.0

    def ground(p: np.ndarray) -> np.ndarray:
        pb = np.empty((len(vs), len(p), 3))
        pb[:, :, :2] = p[None, :, :]
        pb[:, :, 2] = f[:, None]
        denom = np.einsum("kmi,ki->km", pb, n)
        limit = HORIZON_EPSILON * np.linalg.norm(pb, axis=2)
        bad = (np.abs(denom) < limit) | (denom > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            P = -pb / denom[:, :, None]
        P[bad] = np.nan
        return P

    return np.linalg.norm(ground(p1) - ground(p2), axis=2)


@dataclass(frozen=True)
class SecondVPSearch:
    """Result of the grid search for the second vanishing point."""

    vp2: ImagePoint
    objective: float
    candidates: int
    low_confidence: bool


class ManualCalibrationManager:
    """Least-squares VP1, grid-searched VP2 and the measured-distance scale."""

    def __init__(self, settings: SettingsManager, image_size: tuple[int, int]) -> None:
        self.settings = settings
        self.image_size = image_size
        self.diagnostics: dict = {}

    def feasible_offsets(self, u: ImagePoint, v0: ImagePoint) -> np.ndarray:
        """Grid offsets along the horizon from ``v0`` with a focal length in range.

        Raises:
            EmptyFeasibleGrid: If no grid position qualifies.
        """
        direction = np.array([v0.x - u.x, v0.y - u.y])
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            raise EmptyFeasibleGrid("initial VP2 coincides with VP1")
        direction /= norm
        width = self.image_size[0]
        lo, hi = (k * width for k in self.settings.manual_focal_range)
        base = -(u.x * v0.x + u.y * v0.y)
        slope = -(u.x * direction[0] + u.y * direction[1])
        spacing = self.settings.manual_grid_spacing_px
        if abs(slope) < 1e-12:
            if not lo**2 <= base <= hi**2:
                raise EmptyFeasibleGrid("horizon holds no reasonable focal length")
            return np.array([0.0])
        # f^2 = base + slope * s
        bounds = sorted(((lo**2 - base) / slope, (hi**2 - base) / slope))
        k0 = int(np.ceil(bounds[0] / spacing))
        k1 = int(np.floor(bounds[1] / spacing))
        if k1 < k0:
            raise EmptyFeasibleGrid("no grid position gives a reasonable focal length")
        return np.arange(k0, k1 + 1, dtype=float) * spacing

    def optimize_second_vp(
        self,
        u: ImagePoint,
        v0: ImagePoint,
        d1: Sequence[MeasuredSegment],
        d2: Sequence[MeasuredSegment],
    ) -> SecondVPSearch:
        """Grid search minimizing the metric error on ``d2``.

        For every candidate the scale is re-derived from ``d1``; the objective
        is the summed absolute difference between scaled road lengths of the
        ``d2`` segments and their measured meters. Ties go to the candidate
        nearest ``v0``.

        Raises:
            EmptyFeasibleGrid: If no candidate yields a finite objective.
            EmptyMarkings: Without ``d1`` or ``d2`` segments.
        """
        if not d1 or not d2:
            raise EmptyMarkings("grid search needs D1 and D2 segments")
        offsets = self.feasible_offsets(u, v0)
        direction = np.array([v0.x - u.x, v0.y - u.y])
        direction /= np.linalg.norm(direction)
        a1, b1, m1 = _segment_arrays(d1)
        a2, b2, m2 = _segment_arrays(d2)

        objectives = np.empty(len(offsets))
        for start in range(0, len(offsets), _CHUNK):
            s = offsets[start : start + _CHUNK]
            vs = np.array([v0.x, v0.y]) + s[:, None] * direction
            with np.errstate(invalid="ignore", divide="ignore"):
                scale = np.mean(m1[None, :] / _road_lengths(u, vs, a1, b1), axis=1)
                lengths = scale[:, None] * _road_lengths(u, vs, a2, b2)
                objectives[start : start + len(s)] = np.abs(lengths - m2).sum(axis=1)
        objectives[~np.isfinite(objectives)] = np.inf
        if not np.isfinite(objectives).any():
            raise EmptyFeasibleGrid("no candidate projects every marking to the road")

        order = np.lexsort((offsets, np.abs(offsets), objectives))
        best = int(order[0])
        vp2 = ImagePoint(
            float(v0.x + offsets[best] * direction[0]),
            float(v0.y + offsets[best] * direction[1]),
        )
        result = SecondVPSearch(
            vp2=vp2,
            objective=float(objectives[best]),
            candidates=len(offsets),
            low_confidence=len(d2) < 2,
        )
        logger.info(
            f"VP2 grid search over {len(offsets)} candidates: {vp2}, "
            f"objective {result.objective:.6g}"
        )
        if result.low_confidence:
            logger.warning("Only one D2 segment; VP2 is weakly constrained")
        return result

    def calibrate(self, markings: GroundTruthMarking) -> CameraCalibration:
        """Calibration with scale from marked lines and measured distances."""
        u = vp_least_squares(markings.lane_lines)
        v0 = vp_least_squares(markings.perpendicular_lines)
        search = self.optimize_second_vp(u, v0, markings.d1, markings.d2)
        calib = calibration_from_vps(u, search.vp2, image_size=self.image_size)
        scale = manual_scale(calib, markings.d1)
        self.diagnostics = {
            "vp1": [u.x, u.y],
            "vp2_initial": [v0.x, v0.y],
            "vp2": [search.vp2.x, search.vp2.y],
            "objective": search.objective,
            "candidates": search.candidates,
            "low_confidence": search.low_confidence,
            "scale": scale,
        }
        return calib.with_scale(scale)
