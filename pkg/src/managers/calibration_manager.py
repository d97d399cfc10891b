"""Vanishing-point estimation and the automatic camera calibration."""

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce

import numpy as np
from loguru import logger

from src.core.camera import CameraCalibration, ImagePoint, calibration_from_vps
from src.core.diamond_space import DiamondMaximum, DiamondSpace, Mask
from src.core.edgelet import Edgelet, RasterImage, collect_edgelets
from src.core.errors import (
    AllMasked,
    DegenerateVPs,
    EmptyAccumulator,
    InsufficientData,
)
from src.core.lines import LineObservation, TrajectorySegment
from src.managers.settings_manager import SettingsManager
from src.utils.constants import CASCADE_REFINEMENT, CASCADE_WINDOW_CELLS


@dataclass(frozen=True)
class VPEstimate:
    """Coarse and refined accumulator maxima of one vanishing point."""

    coarse: DiamondMaximum
    refined: DiamondMaximum
    line_count: int

    @property
    def point(self) -> ImagePoint:
        if self.refined.is_ideal:
            raise DegenerateVPs(
                f"vanishing point at infinity, direction {self.refined.point[:2]}"
            )
        return self.refined.image_point()

    @property
    def low_confidence(self) -> bool:
        return self.refined.low_confidence

    def as_dict(self) -> dict:
        return {
            "point": list(self.refined.point),
            "coarse_point": list(self.coarse.point),
            "score": self.refined.score,
            "coarse_score": self.coarse.score,
            "score_ratio": self.refined.score_ratio,
            "low_confidence": self.low_confidence,
            "lines": self.line_count,
        }


def second_vp_mask(
    vp1: ImagePoint,
    focal_range: tuple[float, float] | None,
    max_inclination_deg: float,
) -> Mask:
    """Cells where the candidate VP2 gives a real focal length for ``vp1``.

    The focal length has to fall in ``focal_range`` (pixels) when given and
    the horizon through both points may not be steeper than
    ``max_inclination_deg``.
    """
    tan_max = math.tan(math.radians(max_inclination_deg))

    def allowed(points: np.ndarray) -> np.ndarray:
        w = points[:, 2]
        finite = w > 1e-12
        safe_w = np.where(finite, w, 1.0)
        x = points[:, 0] / safe_w
        y = points[:, 1] / safe_w
        radicand = -(vp1.x * x + vp1.y * y)
        ok = finite & (radicand > 0)
        if focal_range is not None:
            f = np.sqrt(np.clip(radicand, 0.0, None))
            ok &= (f >= focal_range[0]) & (f <= focal_range[1])
        dx = np.abs(x - vp1.x)
        dy = np.abs(y - vp1.y)
        ok &= dy <= tan_max * dx
        return ok

    return allowed


class CalibrationManager:
    """Estimates both vanishing points by diamond-space voting.

    Each estimate is one coarse pass over the whole projective plane followed
    by a finer re-accumulation in a window around the coarse maximum. Lines
    are sharded over ``settings.threads`` private accumulators that are
    merged before the maximum search.
    """

    def __init__(
        self, settings: SettingsManager, image_size: tuple[int, int]
    ) -> None:
        self.settings = settings
        self.image_size = image_size
        self.first_space: DiamondSpace | None = None
        self.second_space: DiamondSpace | None = None
        self.edgelets: list[Edgelet] = []
        self.diagnostics: dict = {}

    def _new_space(self) -> DiamondSpace:
        return DiamondSpace.for_image(self.settings.diamond_resolution, self.image_size)

    def _accumulate(
        self, lines: Sequence[LineObservation], factory: Callable[[], DiamondSpace]
    ) -> DiamondSpace:
        shards = max(1, min(self.settings.threads, len(lines)))

        def build(k: int) -> DiamondSpace:
            space = factory()
            space.accumulate_lines(lines[k::shards])
            return space

        with ThreadPoolExecutor(max_workers=shards) as pool:
            spaces = list(pool.map(build, range(shards)))
        return reduce(DiamondSpace.merge, spaces)

    def _cascade(
        self, lines: Sequence[LineObservation], mask: Mask | None
    ) -> tuple[DiamondSpace, VPEstimate]:
        coarse_space = self._accumulate(lines, self._new_space)
        coarse = coarse_space.find_maximum(mask)
        fine_template = coarse_space.window(
            coarse.cell, CASCADE_WINDOW_CELLS, CASCADE_REFINEMENT
        )

        def fine_factory() -> DiamondSpace:
            return DiamondSpace(
                fine_template.resolution,
                fine_template.normalization,
                fine_template.bounds,
            )

        fine_space = self._accumulate(lines, fine_factory)
        try:
            refined = fine_space.find_maximum(mask)
        except (EmptyAccumulator, AllMasked):
            logger.debug("Refinement window empty; keeping the coarse maximum")
            refined = coarse
        return coarse_space, VPEstimate(coarse, refined, len(lines))

    def estimate_first_vp(self, segments: Sequence[TrajectorySegment]) -> VPEstimate:
        """Vote trajectory lines, each weighted by its displacement length.

        Raises:
            InsufficientData: With fewer than ``settings.min_segments`` segments.
        """
        usable = [s for s in segments if s.length >= self.settings.min_displacement_px]
        if len(usable) < self.settings.min_segments:
            raise InsufficientData(
                f"{len(usable)} trajectory segment(s), "
                f"need {self.settings.min_segments}"
            )
        lines = [
            LineObservation.through(s.p_start, s.p_end, weight=s.length)
            for s in usable
        ]
        self.first_space, estimate = self._cascade(lines, None)
        logger.info(
            f"First VP at {estimate.refined.point} from {len(lines)} segments "
            f"(score ratio {estimate.refined.score_ratio:.2f})"
        )
        if estimate.low_confidence:
            logger.warning("First VP maximum is not clearly above the background")
        return estimate

    def estimate_second_vp(
        self, edgelets: Sequence[Edgelet], vp1: ImagePoint
    ) -> VPEstimate:
        """Vote edgelet lines, weight ``min(q, cap)``, in the feasible region.

        Raises:
            InsufficientData: With fewer than ``settings.min_edgelets`` edgelets.
            AllMasked: If no voted cell satisfies the constraints.
        """
        if len(edgelets) < self.settings.min_edgelets:
            raise InsufficientData(
                f"{len(edgelets)} edgelet(s), need {self.settings.min_edgelets}"
            )
        cap = self.settings.edgelet_weight_cap
        lines = [
            LineObservation.along(e.seed, e.direction, weight=min(e.quality, cap))
            for e in edgelets
        ]
        mask = second_vp_mask(
            vp1, self.settings.focal_range, self.settings.max_horizon_inclination_deg
        )
        self.second_space, estimate = self._cascade(lines, mask)
        logger.info(
            f"Second VP at {estimate.refined.point} from {len(lines)} edgelets "
            f"(score ratio {estimate.refined.score_ratio:.2f})"
        )
        if estimate.low_confidence:
            logger.warning("Second VP maximum is not clearly above the background")
        return estimate

    def calibrate(
        self,
        segments: Sequence[TrajectorySegment],
        frames: Sequence[RasterImage] | None = None,
        edgelets: Sequence[Edgelet] | None = None,
    ) -> CameraCalibration:
        """Full calibration without scale from trajectories plus frames or edgelets.

        Precomputed ``edgelets`` win over ``frames``; they are expected to be
        filtered and trimmed already.
        """
        first = self.estimate_first_vp(segments)
        vp1 = first.point
        if edgelets is None:
            if not frames:
                raise InsufficientData("no frames and no edgelets to vote VP2")
            edgelets = collect_edgelets(
                frames,
                vp1,
                keep_fraction=self.settings.keep_fraction,
                vp1_exclusion_angle=self.settings.vp1_exclusion_deg,
                threshold_fraction=self.settings.seed_threshold_fraction,
                workers=self.settings.threads,
            )
        self.edgelets = list(edgelets)
        second = self.estimate_second_vp(self.edgelets, vp1)
        calib = calibration_from_vps(vp1, second.point, image_size=self.image_size)
        self.diagnostics = {
            "segments": len(segments),
            "edgelets": len(self.edgelets),
            "vp1": first.as_dict(),
            "vp2": second.as_dict(),
            "focal_px": calib.f,
        }
        logger.info(f"Calibrated: f = {calib.f:.2f} px, n = {calib.plane.n}")
        return calib
