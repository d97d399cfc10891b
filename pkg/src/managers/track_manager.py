"""Builds vehicle tracks from per-frame detections."""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import KalmanFilter
from loguru import logger

from src.core.bbox import BBox, iou
from src.core.bounding_box_3d import construct_3d_bbox, reference_point
from src.core.camera import CameraCalibration, ImagePoint
from src.core.errors import DegenerateHull, TangentFailure
from src.core.track import Detection, Track
from src.managers.settings_manager import SettingsManager
from src.utils.constants import (
    GATE_MIN_BOX_FRACTION,
    MATCH_TIME_TOLERANCE_S,
    ReferencePointMode,
)


def _measurement(bbox: BBox) -> np.ndarray:
    cx, cy = bbox.center
    return np.array([cx, cy, bbox.w, bbox.h], dtype=float)


class BoxFilter:
    """Constant-velocity Kalman filter over ``(cx, cy, w, h, vx, vy)``.

    The first detection fixes position and size; the second fixes the
    velocity exactly from the two centers (two-point initialization).
    Box size follows a random walk.
    """

    def __init__(
        self,
        bbox: BBox,
        frame: int,
        measurement_sigma: float,
        process_sigma: float,
    ) -> None:
        self.kf = KalmanFilter(dim_x=6, dim_z=4)
        self.kf.F = np.eye(6)
        self.kf.F[0, 4] = self.kf.F[1, 5] = 1.0
        self.kf.H = np.eye(4, 6)
        self.kf.R = np.eye(4) * measurement_sigma**2
        q = Q_discrete_white_noise(dim=2, dt=1.0, var=process_sigma**2)
        Q = np.zeros((6, 6))
        for pos, vel in ((0, 4), (1, 5)):
            Q[np.ix_([pos, vel], [pos, vel])] = q
        Q[2, 2] = Q[3, 3] = process_sigma**2
        self.kf.Q = Q
        z = _measurement(bbox)
        self.kf.x = np.r_[z, 0.0, 0.0].reshape(6, 1)
        size = max(bbox.w, bbox.h)
        self.kf.P = np.diag([measurement_sigma**2] * 4 + [size**2] * 2)
        self._first: tuple[int, np.ndarray] | None = (frame, z)
        self._sigma = measurement_sigma

    @property
    def initialized(self) -> bool:
        return self._first is None

    @property
    def state(self) -> np.ndarray:
        return self.kf.x[:, 0].copy()

    def predict(self) -> None:
        if self.initialized:
            self.kf.predict()

    def predicted_center(self) -> np.ndarray:
        return self.kf.x[:2, 0].copy()

    def gate(self, sigmas: float) -> np.ndarray:
        """Half-widths of the association window around the predicted center."""
        x = self.kf.x[:, 0]
        floor = GATE_MIN_BOX_FRACTION * np.array([x[2], x[3]])
        if not self.initialized:
            return np.full(2, max(x[2], x[3]))
        S = self.kf.H @ self.kf.P @ self.kf.H.T + self.kf.R
        sigma = np.sqrt(np.diag(S)[:2])
        return np.maximum(sigmas * sigma, floor)

    def update(self, bbox: BBox, frame: int) -> None:
        z = _measurement(bbox)
        if self._first is not None:
            frame0, z0 = self._first
            gap = frame - frame0
            velocity = (z[:2] - z0[:2]) / gap
            self.kf.x = np.r_[z, velocity].reshape(6, 1)
            var = self._sigma**2
            self.kf.P = np.diag([var] * 4 + [2.0 * var / gap**2] * 2)
            self._first = None
            return
        self.kf.update(z)


@dataclass
class _Active:
    track: Track
    filter: BoxFilter
    missed: int = 0


@dataclass(frozen=True)
class CountingResult:
    """Outcome of matching counted tracks to ground-truth passes."""

    matches: list[tuple[int, int]]
    false_positives: int
    missed: int
    recall: float
    fppm: float


def group_and_filter(
    detections: Mapping[int, Sequence[Detection]], occlusion_iou: float
) -> dict[int, list[Detection]]:
    """Drop detections partly hidden behind a nearer vehicle.

    A detection goes when a detection with a lower bottom edge (nearer to
    the camera) overlaps it by IoU above ``occlusion_iou`` or contains it.
    """
    kept: dict[int, list[Detection]] = {}
    dropped = 0
    for frame in sorted(detections):
        dets = list(detections[frame])
        survivors = []
        for det in dets:
            occluded = any(
                other.bbox.y2 > det.bbox.y2
                and (
                    iou(other.bbox, det.bbox) > occlusion_iou
                    or other.bbox.contains(det.bbox)
                )
                for other in dets
                if other is not det
            )
            if occluded:
                dropped += 1
                logger.trace(f"Frame {frame}: dropped occluded {det.bbox}")
            else:
                survivors.append(det)
        kept[frame] = survivors
    logger.debug(f"Occlusion filter dropped {dropped} detection(s)")
    return kept


class TrackManager:
    """Detection filtering, Kalman box tracking and reference points."""

    def __init__(self, settings: SettingsManager) -> None:
        self.settings = settings

    def group_and_filter(
        self, detections: Mapping[int, Sequence[Detection]]
    ) -> dict[int, list[Detection]]:
        return group_and_filter(detections, self.settings.occlusion_iou)

    def track_boxes(self, detections: Mapping[int, Sequence[Detection]]) -> list[Track]:
        """Associate detections frame by frame into tracks.

        Association is greedy nearest-centroid inside each track's gate. A
        track ends after ``max_missed_frames`` consecutive misses; tracks
        with fewer than ``min_track_detections`` detections are discarded.
        """
        frames = sorted(f for f, dets in detections.items() if dets)
        if not frames:
            return []
        s = self.settings
        active: list[_Active] = []
        finished: list[Track] = []
        next_id = 0
        for frame in range(frames[0], frames[-1] + 1):
            for a in active:
                a.filter.predict()
            dets = list(detections.get(frame, ()))
            centers = [np.array(d.bbox.center) for d in dets]

            candidates = []
            for ti, a in enumerate(active):
                predicted = a.filter.predicted_center()
                half = a.filter.gate(s.gate_sigmas)
                for di, center in enumerate(centers):
                    delta = np.abs(center - predicted)
                    if np.all(delta <= half):
                        dist = float(np.hypot(*delta))
                        candidates.append((dist, a.track.track_id, di, ti))
            candidates.sort()

            used_tracks: set[int] = set()
            used_dets: set[int] = set()
            for _, _, di, ti in candidates:
                if ti in used_tracks or di in used_dets:
                    continue
                used_tracks.add(ti)
                used_dets.add(di)
                a = active[ti]
                a.filter.update(dets[di].bbox, frame)
                a.missed = 0
                a.track.detections.append(dets[di])
                a.track.states.append(a.filter.state)

            still_active = []
            for ti, a in enumerate(active):
                if ti not in used_tracks:
                    a.missed += 1
                if a.missed > s.max_missed_frames:
                    finished.append(a.track)
                else:
                    still_active.append(a)
            active = still_active

            for di, det in enumerate(dets):
                if di in used_dets:
                    continue
                box_filter = BoxFilter(
                    det.bbox, frame, s.measurement_sigma_px, s.process_sigma_px
                )
                track = Track(track_id=next_id, detections=[det])
                track.states.append(box_filter.state)
                next_id += 1
                active.append(_Active(track=track, filter=box_filter))

        finished.extend(a.track for a in active)
        tracks = sorted(
            (t for t in finished if len(t) >= s.min_track_detections),
            key=lambda t: t.track_id,
        )
        logger.info(
            f"Built {len(tracks)} track(s) from {len(frames)} frame(s), "
            f"{len(finished) - len(tracks)} too short"
        )
        return tracks

    def attach_reference_points(
        self,
        tracks: Sequence[Track],
        calib: CameraCalibration,
        image_size: tuple[int, int],
        mode: ReferencePointMode | None = None,
    ) -> None:
        """Fill ``boxes`` and ``reference_points`` of every track in place."""
        mode = mode or self.settings.reference_point_mode
        skipped = 0
        for track in tracks:
            track.boxes = []
            track.reference_points = []
            receding = is_receding(track, calib, image_size)
            for det in track.detections:
                if mode == ReferencePointMode.BBOX_BOTTOM:
                    bx, by = det.centered_bbox(image_size).bottom_center
                    track.boxes.append(None)
                    track.reference_points.append((det.t, ImagePoint(bx, by)))
                    continue
                hull = det.centered_hull(image_size)
                if hull is None:
                    track.boxes.append(None)
                    continue
                try:
                    box = construct_3d_bbox(hull, calib)
                    p = reference_point(box, receding)
                except (DegenerateHull, TangentFailure) as e:
                    logger.debug(f"Track {track.track_id} frame {det.frame}: {e}")
                    track.boxes.append(None)
                    skipped += 1
                    continue
                track.boxes.append(box)
                point = ImagePoint(float(p[0]), float(p[1]))
                track.reference_points.append((det.t, point))
        if skipped:
            logger.warning(f"Skipped {skipped} detection(s) without a usable 3D box")

    def locate_crossings(
        self,
        tracks: Sequence[Track],
        measurement_line: np.ndarray,
        lane_boundaries: Sequence[np.ndarray],
    ) -> None:
        """Set ``crossing_time`` and ``lane`` of tracks passing the line.

        Lines are homogeneous and in centered coordinates. Lane ``k`` lies
        between boundaries ``k`` and ``k + 1``; a crossing outside every lane
        gets lane ``-1``.
        """
        for track in tracks:
            track.crossing_time, track.lane = None, None
            path = _track_path(track)
            crossing = crossing_on_line(path, measurement_line)
            if crossing is None:
                continue
            t, point = crossing
            track.crossing_time = t
            track.lane = lane_of(point, measurement_line, lane_boundaries)
        crossed = sum(t.crossing_time is not None for t in tracks)
        logger.debug(f"{crossed} of {len(tracks)} track(s) cross the measurement line")

    def match_tracks_to_ground_truth(
        self,
        tracks: Sequence[Track],
        passes: Sequence[tuple[int, int, float]],
        duration_s: float,
    ) -> CountingResult:
        return match_crossings(
            [
                (t.track_id, t.lane, t.crossing_time)
                for t in tracks
                if t.crossing_time is not None and t.lane is not None
            ],
            passes,
            duration_s,
        )


def is_receding(
    track: Track, calib: CameraCalibration, image_size: tuple[int, int]
) -> bool:
    """Whether the track moves towards VP1 in the image."""
    first = np.array(track.detections[0].centered_bbox(image_size).bottom_center)
    last = np.array(track.detections[-1].centered_bbox(image_size).bottom_center)
    to_vp = calib.vp1.as_array() - first
    return float((last - first) @ to_vp) >= 0.0


def _track_path(track: Track) -> list[tuple[float, np.ndarray]]:
    return [(t, p.as_array()) for t, p in track.reference_points]


def crossing_on_line(
    path: Sequence[tuple[float, np.ndarray]], line: np.ndarray
) -> tuple[float, np.ndarray] | None:
    """First time and point where a timed polyline crosses a homogeneous line."""
    for (t0, p0), (t1, p1) in zip(path, path[1:]):
        s0 = float(line @ np.r_[p0, 1.0])
        s1 = float(line @ np.r_[p1, 1.0])
        if s0 == 0.0:
            return t0, p0
        if s0 * s1 < 0.0:
            k = s0 / (s0 - s1)
            return t0 + k * (t1 - t0), p0 + k * (p1 - p0)
    if path and float(line @ np.r_[path[-1][1], 1.0]) == 0.0:
        return path[-1]
    return None


def lane_of(
    point: np.ndarray, line: np.ndarray, boundaries: Sequence[np.ndarray]
) -> int:
    """Lane index of a point on ``line`` given ordered boundary lines."""
    if len(boundaries) < 2:
        return 0
    direction = np.array([-line[1], line[0]])
    ts = []
    for boundary in boundaries:
        x = np.cross(line, boundary)
        if abs(x[2]) < 1e-12:
            return -1
        ts.append(float((x[:2] / x[2]) @ direction))
    ts_arr = np.array(ts)
    t = float(point @ direction)
    if ts_arr[-1] < ts_arr[0]:
        ts_arr, t = -ts_arr, -t
    k = int(np.searchsorted(ts_arr, t, side="right")) - 1
    return k if 0 <= k < len(ts_arr) - 1 else -1


def match_crossings(
    crossings: Sequence[tuple[int, int, float]],
    passes: Sequence[tuple[int, int, float]],
    duration_s: float,
) -> CountingResult:
    """Greedy one-to-one matching of ``(id, lane, time)`` crossings to passes.

    A pair matches when lanes agree and times differ by less than 0.2 s;
    closer pairs are taken first. A zero-length recording reports no false
    positives per minute.
    """
    pairs = []
    for ci, (track_id, lane, t) in enumerate(crossings):
        for pi, (vehicle_id, gt_lane, gt_t) in enumerate(passes):
            dt = abs(t - gt_t)
            if lane == gt_lane and dt < MATCH_TIME_TOLERANCE_S:
                pairs.append((dt, track_id, vehicle_id, ci, pi))
    pairs.sort()
    used_c: set[int] = set()
    used_p: set[int] = set()
    matches = []
    for _, track_id, vehicle_id, ci, pi in pairs:
        if ci in used_c or pi in used_p:
            continue
        used_c.add(ci)
        used_p.add(pi)
        matches.append((track_id, vehicle_id))
    false_positives = len(crossings) - len(matches)
    missed = len(passes) - len(matches)
    recall = len(matches) / len(passes) if passes else 1.0
    fppm = false_positives / (duration_s / 60.0) if duration_s > 0 else 0.0
    return CountingResult(
        matches=sorted(matches),
        false_positives=false_positives,
        missed=missed,
        recall=recall,
        fppm=fppm,
    )
