"""Vehicle speeds from reference-point tracks."""

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from src.core.camera import CameraCalibration, project_to_road_many
from src.core.errors import HorizonPoint, TooShortTrack
from src.core.track import Track
from src.managers.settings_manager import SettingsManager
from src.utils.constants import MS_TO_KMH
from src.utils.formats import write_csv

SPEEDS_HEADER = ("track_id", "speed_kmh", "n_samples", "first_t", "last_t", "lane")


@dataclass(frozen=True)
class SpeedMeasurement:
    track_id: int
    speed_kmh: float
    sample_count: int
    tau: int
    pair_speeds: tuple[float, ...]
    first_t: float
    last_t: float
    lane: int | None = None

    def as_row(self) -> list:
        lane = "" if self.lane is None else self.lane
        return [
            self.track_id,
            f"{self.speed_kmh:.6f}",
            self.sample_count,
            f"{self.first_t:.6f}",
            f"{self.last_t:.6f}",
            lane,
        ]


def measure_speed(track: Track, calib: CameraCalibration, tau: int) -> SpeedMeasurement:
    """Median of the ground speeds between reference points ``tau`` apart.

    An even number of pair speeds yields the lower middle one. Pairs with
    an end on or above the horizon are skipped.

    Raises:
        TooShortTrack: With ``tau`` or fewer reference points.
        MissingScale: If the calibration has no scale.
        HorizonPoint: If every pair was skipped.
        ValueError: If timestamps do not strictly increase.
    """
    scale = calib.require_scale()
    points = track.reference_points
    if len(points) < tau + 1:
        raise TooShortTrack(
            f"track {track.track_id} has {len(points)} reference point(s), "
            f"need {tau + 1}"
        )
    times = np.array([t for t, _ in points], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError(f"track {track.track_id}: timestamps not strictly increasing")
    xy = np.array([[p.x, p.y] for _, p in points], dtype=float)
    ground = project_to_road_many(xy, calib, strict=False)

    dist = np.linalg.norm(ground[tau:] - ground[:-tau], axis=1)
    dt = times[tau:] - times[:-tau]
    ok = np.isfinite(dist)
    if not ok.any():
        raise HorizonPoint(f"track {track.track_id}: no measurable point pair")
    if not ok.all():
        logger.warning(
            f"Track {track.track_id}: skipped {int((~ok).sum())} pair(s) "
            f"at the horizon"
        )
    speeds = np.sort(scale * dist[ok] / dt[ok])
    median = float(speeds[(len(speeds) - 1) // 2])
    return SpeedMeasurement(
        track_id=track.track_id,
        speed_kmh=median * MS_TO_KMH,
        sample_count=len(points),
        tau=tau,
        pair_speeds=tuple(float(v) * MS_TO_KMH for v in speeds),
        first_t=float(times[0]),
        last_t=float(times[-1]),
        lane=track.lane,
    )


class SpeedManager:
    def __init__(self, settings: SettingsManager) -> None:
        self.settings = settings

    def measure_all(
        self, tracks: Sequence[Track], calib: CameraCalibration
    ) -> list[SpeedMeasurement]:
        """Speeds of every measurable track; the rest are logged and skipped."""
        results = []
        for track in tracks:
            try:
                results.append(measure_speed(track, calib, self.settings.tau))
            except (TooShortTrack, HorizonPoint) as e:
                logger.warning(f"No speed for track {track.track_id}: {e}")
        logger.info(f"Measured {len(results)} of {len(tracks)} track(s)")
        return results

    @staticmethod
    def save(path: str | Path, measurements: Sequence[SpeedMeasurement]) -> None:
        write_csv(path, SPEEDS_HEADER, (m.as_row() for m in measurements))
