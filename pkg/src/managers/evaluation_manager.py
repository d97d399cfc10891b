"""Calibration, distance, speed and counting metrics against ground truth."""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from src.core.camera import CameraCalibration, project_to_road
from src.core.errors import EmptyMarkings, EmptyMatches
from src.core.markings import GroundTruthMarking, MeasuredSegment
from src.managers.speed_manager import SpeedMeasurement
from src.managers.track_manager import CountingResult
from src.utils.constants import HISTOGRAM_BIN_KMH, P99_QUANTILE, DistanceFilter
from src.utils.formats import (
    CountingFile,
    ErrorSummaryFile,
    SummaryBlock,
    VehiclePass,
    write_csv,
)

HISTOGRAM_HEADER = ("threshold_kmh", "fraction")


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: element ``ceil(q * n) - 1`` of sorted values."""
    n = len(sorted_values)
    k = min(max(math.ceil(q * n) - 1, 0), n - 1)
    return float(sorted_values[k])


@dataclass(frozen=True)
class ErrorSummary:
    """Mean, median and 99th percentile of absolute and relative errors.

    Relative errors are percentages of the ground-truth value and are
    ``None`` unless every ground-truth value is positive.
    """

    mean: float
    median: float
    p99: float
    rel_mean: float | None
    rel_median: float | None
    rel_p99: float | None
    count: int

    @classmethod
    def from_errors(
        cls, estimated: Sequence[float], truth: Sequence[float]
    ) -> "ErrorSummary":
        est = np.asarray(estimated, dtype=float)
        gt = np.asarray(truth, dtype=float)
        if est.size == 0:
            raise ValueError("no errors to summarize")
        err = np.sort(np.abs(gt - est))
        rel = None
        if np.all(gt > 0):
            rel = np.sort(np.abs(gt - est) / gt * 100.0)
        return cls(
            mean=float(err.mean()),
            median=float(np.median(err)),
            p99=nearest_rank(err, P99_QUANTILE),
            rel_mean=None if rel is None else float(rel.mean()),
            rel_median=None if rel is None else float(np.median(rel)),
            rel_p99=None if rel is None else nearest_rank(rel, P99_QUANTILE),
            count=int(est.size),
        )

    def to_file(self) -> ErrorSummaryFile:
        rel = None
        if self.rel_mean is not None:
            rel = SummaryBlock(
                mean=self.rel_mean,
                median=self.rel_median,  # type: ignore[arg-type]
                p99=self.rel_p99,  # type: ignore[arg-type]
            )
        return ErrorSummaryFile(
            abs=SummaryBlock(mean=self.mean, median=self.median, p99=self.p99),
            rel=rel,
            count=self.count,
        )


def _road_length(seg: MeasuredSegment, calib: CameraCalibration) -> float:
    P1 = project_to_road(seg.p1, calib).as_array()
    P2 = project_to_road(seg.p2, calib).as_array()
    return float(np.linalg.norm(P1 - P2))


def ratio_error(calib: CameraCalibration, markings: GroundTruthMarking) -> ErrorSummary:
    """Errors of scale-free length ratios over every VP1 x VP2 segment pair.

    Raises:
        EmptyMarkings: Without a segment in either direction.
        HorizonPoint: If a segment endpoint does not reach the road.
    """
    if not markings.d1 or not markings.d2:
        raise EmptyMarkings("ratio error needs segments towards both VPs")
    l1 = [_road_length(s, calib) for s in markings.d1]
    l2 = [_road_length(s, calib) for s in markings.d2]
    measured, truth = [], []
    for s1, a in zip(markings.d1, l1):
        for s2, b in zip(markings.d2, l2):
            measured.append(a / b)
            truth.append(s1.meters / s2.meters)
    summary = ErrorSummary.from_errors(measured, truth)
    logger.debug(f"Ratio error over {summary.count} pair(s): mean {summary.mean:.6g}")
    return summary


def distance_error(
    calib: CameraCalibration,
    markings: GroundTruthMarking,
    which: DistanceFilter = DistanceFilter.VP1,
) -> ErrorSummary:
    """Errors of metric segment lengths, towards VP1 only or in all directions.

    Raises:
        MissingScale: If the calibration has no scale.
        EmptyMarkings: If the filter selects no segment.
    """
    scale = calib.require_scale()
    segments = list(markings.d1)
    if which == DistanceFilter.ALL:
        segments += markings.d2
    if not segments:
        raise EmptyMarkings(f"no segments for distance filter {which}")
    measured = [scale * _road_length(s, calib) for s in segments]
    return ErrorSummary.from_errors(measured, [s.meters for s in segments])


def cumulative_histogram(
    errors: Sequence[float], bin_width: float = HISTOGRAM_BIN_KMH
) -> list[tuple[float, float]]:
    """Fraction of errors at or below each threshold ``k * bin_width``.

    The last threshold is the first one covering every error.
    """
    err = np.sort(np.asarray(errors, dtype=float))
    if err.size == 0:
        return []
    top = int(math.ceil(err[-1] / bin_width))
    if top * bin_width < err[-1]:
        top += 1
    thresholds = np.arange(top + 1) * bin_width
    counts = np.searchsorted(err, thresholds, side="right")
    fractions = counts / err.size
    fractions[-1] = 1.0
    return [(float(t), float(f)) for t, f in zip(thresholds, fractions)]


def speed_error(
    measurements: Sequence[SpeedMeasurement],
    passes: Sequence[VehiclePass],
    matches: Sequence[tuple[int, int]],
) -> tuple[ErrorSummary, list[tuple[float, float]]]:
    """Speed errors of matched vehicles and their cumulative histogram.

    ``matches`` pairs track ids with ground-truth vehicle ids. Matched
    tracks without a speed measurement are left out.

    Raises:
        EmptyMatches: If no matched track has a measured speed.
    """
    by_track: Mapping[int, SpeedMeasurement] = {m.track_id: m for m in measurements}
    by_vehicle = {p.vehicle_id: p for p in passes}
    measured, truth = [], []
    for track_id, vehicle_id in matches:
        m = by_track.get(track_id)
        if m is None or vehicle_id not in by_vehicle:
            continue
        measured.append(m.speed_kmh)
        truth.append(by_vehicle[vehicle_id].speed_kmh)
    if not measured:
        raise EmptyMatches("no matched vehicle has a measured speed")
    summary = ErrorSummary.from_errors(measured, truth)
    errors = np.abs(np.array(truth) - np.array(measured))
    logger.info(
        f"Speed error over {summary.count} vehicle(s): mean {summary.mean:.3f} km/h, "
        f"median {summary.median:.3f} km/h"
    )
    return summary, cumulative_histogram(errors)


def counting_block(result: CountingResult) -> CountingFile:
    return CountingFile(
        matched=len(result.matches),
        false_positives=result.false_positives,
        missed=result.missed,
        recall=result.recall,
        fppm=result.fppm,
    )


def save_histogram(path: str | Path, histogram: Sequence[tuple[float, float]]) -> None:
    write_csv(
        path,
        HISTOGRAM_HEADER,
        ([f"{t:.1f}", f"{f:.6f}"] for t, f in histogram),
    )
