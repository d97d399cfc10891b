"""Synthetic traffic scenes with exactly known camera, scale and speeds.

World frame: X along the road, Y to the left, Z up, in meters. The camera
sits at ``(0, lateral_offset_m, height_m)``. Its pose is built from pan about
the world Z axis, then tilt down and roll about the optical axis.
"""

import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger

from src.core.bbox import BBox, iou
from src.core.bounding_box_3d import convex_hull
from src.core.camera import (
    CameraCalibration,
    ImagePoint,
    calibration_from_vps,
    third_vp,
)
from src.core.edgelet import RasterImage
from src.core.errors import ConfigInvalid, DegenerateHull
from src.core.track import Detection
from src.core.wireframe import WireframeModel, default_models
from src.managers.renderer import Renderer
from src.managers.settings_manager import SettingsManager
from src.utils import constants as c
from src.utils.formats import (
    MarkedSegment,
    MarkingsFile,
    OcclusionInterval,
    SceneConfig,
    SceneTruth,
    TrajectoryRecord,
    VehiclePass,
    calibration_to_file,
    save_detections,
    save_markings,
    save_scene,
    save_trajectories,
    save_truth,
)
from src.utils.image_io import write_pgm

MARKER_SPACING_M = 10.0
MARKER_LENGTH_M = 6.0
OUTLIER_LENGTH_PX = 24.0


def _rot_x(a: float) -> np.ndarray:
    ca, sa = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])


def _rot_z(a: float) -> np.ndarray:
    ca, sa = math.cos(a), math.sin(a)
    return np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])


# Columns: camera right, down and forward in world axes at zero pan and tilt
_M0 = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class SimCamera:
    """Pinhole camera with the principal point at the image center."""

    R: np.ndarray  # world -> camera
    C: np.ndarray
    f: float
    image_size: tuple[int, int]

    @classmethod
    def from_config(cls, scene: SceneConfig) -> "SimCamera":
        cam = scene.camera
        M = (
            _rot_z(math.radians(cam.pan_deg))
            @ _M0
            @ _rot_x(-math.radians(cam.tilt_deg))
            @ _rot_z(math.radians(cam.roll_deg))
        )
        C = np.array([0.0, cam.lateral_offset_m, cam.height_m])
        return cls(R=M.T, C=C, f=cam.focal_px, image_size=scene.image_size)

    def to_camera(self, world: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(world) - self.C) @ self.R.T

    def project(self, world: np.ndarray) -> np.ndarray:
        """Top-left pixel coordinates ``(N, 2)``; NaN rows behind the camera."""
        P = self.to_camera(world)
        out = np.full((len(P), 2), np.nan)
        front = P[:, 2] > 1e-9
        out[front] = self.f * P[front, :2] / P[front, 2:3]
        w, h = self.image_size
        return out + np.array([w / 2.0, h / 2.0])

    def vanishing_point(self, direction: np.ndarray) -> ImagePoint:
        """Centered image of a world direction.

        Raises:
            ConfigInvalid: If the direction is parallel to the image plane.
        """
        d = self.R @ np.asarray(direction, dtype=float)
        if abs(d[2]) < 1e-9:
            raise ConfigInvalid(
                f"world direction {tuple(direction)} vanishes at infinity"
            )
        return ImagePoint(float(self.f * d[0] / d[2]), float(self.f * d[1] / d[2]))

    def inside(self, pixels: np.ndarray) -> np.ndarray:
        w, h = self.image_size
        return (
            np.isfinite(pixels).all(axis=1)
            & (pixels[:, 0] >= 0)
            & (pixels[:, 0] < w)
            & (pixels[:, 1] >= 0)
            & (pixels[:, 1] < h)
        )


@dataclass
class SimVehicle:
    vehicle_id: int
    model: WireframeModel
    label: str
    lane: int
    speed_ms: float
    entry_time: float
    heading: int  # +1 away from the camera, -1 towards it
    start_x: float
    end_x: float
    lane_y: float
    ghost: bool
    body_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    def center_x(self, t: float) -> float:
        return self.start_x + self.heading * self.speed_ms * (t - self.entry_time)

    def active(self, t: float) -> bool:
        if t < self.entry_time:
            return False
        x = self.center_x(t)
        lo, hi = sorted((self.start_x, self.end_x))
        return lo <= x <= hi

    def to_world(self, local: np.ndarray, t: float) -> np.ndarray:
        local = np.atleast_2d(local)
        flip = np.array([self.heading, self.heading, 1.0])
        return local * flip + np.array([self.center_x(t), self.lane_y, 0.0])

    def front_crossing_time(self, line_x: float) -> float:
        front_start = self.start_x + self.heading * self.model.length_m / 2.0
        return self.entry_time + (line_x - front_start) * self.heading / self.speed_ms


@dataclass(frozen=True)
class FrameResult:
    detections: list[Detection]
    # (vehicle id, body point index, frame, x, y)
    observations: list[tuple[int, int, int, float, float]]
    image: RasterImage | None
    occluded: list[int]


@dataclass
class SceneBundle:
    """Everything one simulated scene produces, before it is written out."""

    scene: SceneConfig
    truth: SceneTruth
    calibration: CameraCalibration
    trajectories: list[TrajectoryRecord]
    detections: list[Detection]
    frames: dict[int, RasterImage]
    markings: MarkingsFile

    def save(self, out_dir: str | Path) -> None:
        """Write the bundle in the interchange formats under ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_scene(out / c.SCENE_FILE, self.scene)
        save_truth(out / c.TRUTH_FILE, self.truth)
        save_trajectories(out / c.TRAJECTORIES_FILE, self.trajectories)
        save_detections(out / c.DETECTIONS_FILE, self.detections)
        save_markings(out / c.MARKINGS_FILE, self.markings)
        frames_dir, masks_dir = out / c.FRAMES_DIR, out / c.MASKS_DIR
        for k, image in sorted(self.frames.items()):
            write_pgm(frames_dir / f"frame_{k:06d}.pgm", image.samples)
            if image.mask is not None:
                mask = image.mask.astype(np.uint8) * 255
                write_pgm(masks_dir / f"frame_{k:06d}.pgm", mask)
        logger.info(f"Scene bundle written to {out}")


class SimulationManager:
    """Generates deterministic scene bundles from a scene config and a seed."""

    def __init__(
        self,
        settings: SettingsManager,
        models: Mapping[str, WireframeModel] | None = None,
    ) -> None:
        self.settings = settings
        self.models = dict(models) if models is not None else default_models()

    def ground_truth_calibration(self, scene: SceneConfig) -> CameraCalibration:
        """Exact calibration; the scale equals the camera height."""
        cam = SimCamera.from_config(scene)
        vp1 = cam.vanishing_point(np.array([1.0, 0.0, 0.0]))
        vp2 = cam.vanishing_point(np.array([0.0, 1.0, 0.0]))
        calib = calibration_from_vps(
            vp1, vp2, scale=scene.camera.height_m, image_size=scene.image_size
        )
        if not math.isclose(calib.f, cam.f, rel_tol=1e-6):
            raise ConfigInvalid(
                f"recovered focal {calib.f:.6g} differs from {cam.f:.6g}"
            )
        return calib

    def _vehicles(
        self, scene: SceneConfig, rng: np.random.Generator
    ) -> list[SimVehicle]:
        vehicles = []
        for i, spec in enumerate(scene.vehicles):
            if spec.model_id not in self.models:
                raise ConfigInvalid(f"vehicle {i}: unknown model {spec.model_id!r}")
            if spec.lane >= scene.lanes.count:
                raise ConfigInvalid(
                    f"vehicle {i}: lane {spec.lane} outside {scene.lanes.count} lane(s)"
                )
            model = self.models[spec.model_id]
            if spec.length_m is not None:
                model = model.mis_sized(spec.length_m / model.length_m)
            heading = 1 if scene.one_way or spec.lane % 2 == 0 else -1
            start, end = scene.road_start_m, scene.road_end_m
            if heading < 0:
                start, end = end, start
            vehicle = SimVehicle(
                vehicle_id=i,
                model=model,
                label=spec.label or spec.model_id,
                lane=spec.lane,
                speed_ms=spec.speed_kmh / c.MS_TO_KMH,
                entry_time=spec.entry_time_s,
                heading=heading,
                start_x=start,
                end_x=end,
                lane_y=-(spec.lane + 0.5) * scene.lanes.width_m,
                ghost=spec.ghost,
            )
            vehicle.body_points = _sample_body_points(
                model, scene.points_per_vehicle, rng
            )
            vehicles.append(vehicle)
        return vehicles

    def _frame(
        self,
        k: int,
        scene: SceneConfig,
        cam: SimCamera,
        vehicles: list[SimVehicle],
        rng: np.random.Generator,
        render: bool,
    ) -> FrameResult:
        t = k / scene.frame_rate
        noise = scene.noise
        detections: list[Detection] = []
        observations: list[tuple[int, int, int, float, float]] = []
        segments: list[tuple[np.ndarray, np.ndarray]] = []
        polygons: list[np.ndarray] = []
        visible: list[tuple[int, BBox]] = []

        for vehicle in vehicles:
            if not vehicle.active(t):
                continue
            pixels = cam.project(vehicle.to_world(vehicle.model.vertices, t))
            if not cam.inside(pixels).all():
                continue
            try:
                hull = convex_hull(pixels)
            except DegenerateHull:
                continue
            box = BBox.from_points(pixels)
            visible.append((vehicle.vehicle_id, box))

            jitter = rng.uniform(-1.0, 1.0, 4) * noise.bbox_jitter_px
            x1, y1 = box.x + jitter[0], box.y + jitter[1]
            x2 = max(box.x2 + jitter[2], x1 + 1.0)
            y2 = max(box.y2 + jitter[3], y1 + 1.0)
            detected = BBox.from_corners(x1, y1, x2, y2)
            loose = detected.dilated(c.HULL_BBOX_TOLERANCE_PX)
            hull = np.column_stack(
                [
                    np.clip(hull[:, 0], loose.x, loose.x2),
                    np.clip(hull[:, 1], loose.y, loose.y2),
                ]
            )
            detections.append(
                Detection(frame=k, t=t, bbox=detected, label=vehicle.label, hull=hull)
            )

            points = cam.project(vehicle.to_world(vehicle.body_points, t))
            sigma = noise.trajectory_sigma_px
            points = points + rng.normal(0.0, 1.0, points.shape) * sigma
            for j, ok in enumerate(cam.inside(points)):
                if ok:
                    x, y = float(points[j, 0]), float(points[j, 1])
                    observations.append((vehicle.vehicle_id, j, k, x, y))

            if render:
                for a, b in vehicle.model.edges:
                    segments.append((pixels[a], pixels[b]))
                polygons.append(hull)

        occluded: set[int] = set()
        for i, (vid, box) in enumerate(visible):
            for other_id, other in visible[i + 1 :]:
                if iou(box, other) > 0.0:
                    occluded.update((vid, other_id))

        image = None
        if render:
            outliers = _outlier_segments(
                segments, polygons, noise.edge_outlier_fraction, rng
            )
            image = Renderer(scene.image_size).render(segments + outliers, polygons)
        return FrameResult(detections, observations, image, sorted(occluded))

    def _markings(
        self, scene: SceneConfig, cam: SimCamera
    ) -> MarkingsFile:
        width = scene.lanes.width_m
        count = scene.lanes.count
        near, far = scene.road_start_m, scene.road_end_m
        line_x = scene.measurement_line_m

        def px(X: float, Y: float) -> tuple[float, float]:
            p = cam.project(np.array([X, Y, 0.0]))[0]
            return float(p[0]), float(p[1])

        def seen(*points: tuple[float, float]) -> bool:
            return bool(cam.inside(np.array(points)).all())

        boundaries = [-k * width for k in range(count + 1)]
        lane_lines = [(px(near, Y), px(far, Y)) for Y in boundaries]

        markers = np.arange(near, far - MARKER_LENGTH_M + 1e-9, MARKER_SPACING_M)
        perpendicular = [(px(X, 0.0), px(X, -count * width)) for X in markers]

        d1, d2 = [], []
        for Y in boundaries:
            for X in markers:
                p1, p2 = px(X, Y), px(X + MARKER_LENGTH_M, Y)
                if seen(p1, p2):
                    d1.append(MarkedSegment(p1=p1, p2=p2, meters=MARKER_LENGTH_M))
        for X in markers:
            for k in range(count):
                p1, p2 = px(X, boundaries[k]), px(X, boundaries[k + 1])
                if seen(p1, p2):
                    d2.append(MarkedSegment(p1=p1, p2=p2, meters=width))
        if not d1 or not d2:
            logger.warning(
                f"Only {len(d1)} VP1 and {len(d2)} VP2 marker segment(s) in view"
            )
        return MarkingsFile(
            image_size=scene.image_size,
            lane_lines=lane_lines,
            perpendicular_lines=perpendicular,
            d1=d1,
            d2=d2,
            measurement_line=(px(line_x, width), px(line_x, -(count + 1) * width)),
            lane_boundaries=[(px(near, Y), px(far, Y)) for Y in boundaries],
        )

    def generate(self, scene: SceneConfig, seed: int) -> SceneBundle:
        """Simulate ``scene``; the result depends only on the scene and ``seed``.

        Raises:
            ConfigInvalid: If the scene is geometrically unusable.
        """
        if scene.road_end_m <= scene.road_start_m:
            raise ConfigInvalid("road_end_m must exceed road_start_m")
        cam = SimCamera.from_config(scene)
        calib = self.ground_truth_calibration(scene)

        n_frames = int(math.floor(scene.duration_s * scene.frame_rate))
        if n_frames < 2:
            raise ConfigInvalid("scene is shorter than two frames")
        streams = np.random.SeedSequence(seed).spawn(n_frames + 1)
        vehicles = self._vehicles(scene, np.random.default_rng(streams[0]))

        render_at: set[int] = set()
        if scene.render_frames > 0:
            picks = np.linspace(0, n_frames - 1, min(scene.render_frames, n_frames))
            render_at = {int(k) for k in np.round(picks)}

        def run(k: int):
            rng = np.random.default_rng(streams[k + 1])
            return self._frame(k, scene, cam, vehicles, rng, k in render_at)

        with ThreadPoolExecutor(max_workers=self.settings.threads) as pool:
            results = list(pool.map(run, range(n_frames)))

        detections = [d for r in results for d in r.detections]
        frames = {k: r.image for k, r in enumerate(results) if r.image is not None}
        trajectories = _tracklets(
            [o for r in results for o in r.observations], scene.tracklet_frames
        )
        occlusions: dict[int, list[int]] = {}
        for k, r in enumerate(results):
            for vid in r.occluded:
                occlusions.setdefault(vid, []).append(k)

        passes = []
        for v in vehicles:
            t = v.front_crossing_time(scene.measurement_line_m)
            if v.ghost or not (v.active(t) and t < scene.duration_s):
                continue
            passes.append(
                VehiclePass(
                    vehicle_id=v.vehicle_id,
                    lane=v.lane,
                    crossing_time_s=t,
                    speed_kmh=v.speed_ms * c.MS_TO_KMH,
                    model_id=v.model.model_id,
                )
            )
        passes.sort(key=lambda p: (p.crossing_time_s, p.vehicle_id))

        vp3 = third_vp(calib)
        truth = SceneTruth(
            calibration=calibration_to_file(calib),
            vp3=(float(vp3[0]), float(vp3[1]), float(vp3[2])),
            passes=passes,
            occlusions=[
                OcclusionInterval(vehicle_id=vid, frames=frames_)
                for vid, frames_ in sorted(occlusions.items())
            ],
            duration_s=scene.duration_s,
        )
        logger.info(
            f"Simulated {n_frames} frame(s): {len(detections)} detection(s), "
            f"{len(trajectories)} trajectory point(s), {len(frames)} rendered "
            f"frame(s), {len(passes)} pass(es)"
        )
        return SceneBundle(
            scene=scene,
            truth=truth,
            calibration=calib,
            trajectories=trajectories,
            detections=detections,
            frames=frames,
            markings=self._markings(scene, cam),
        )


def _sample_body_points(
    model: WireframeModel, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Random points on the model's edges."""
    verts = np.asarray(model.vertices, dtype=float)
    edges = np.array(model.edges)
    picks = edges[rng.integers(0, len(edges), count)]
    s = rng.uniform(0.0, 1.0, (count, 1))
    return verts[picks[:, 0]] * (1.0 - s) + verts[picks[:, 1]] * s


def _outlier_segments(
    segments: list[tuple[np.ndarray, np.ndarray]],
    polygons: list[np.ndarray],
    fraction: float,
    rng: np.random.Generator,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Randomly oriented short edges on the vehicles, a ``fraction`` of all edges."""
    if fraction <= 0 or not polygons:
        return []
    count = int(round(len(segments) * fraction / (1.0 - fraction)))
    out = []
    for _ in range(count):
        poly = polygons[int(rng.integers(0, len(polygons)))]
        weights = rng.dirichlet(np.ones(len(poly)))
        center = weights @ poly
        angle = rng.uniform(0.0, math.pi)
        half = 0.5 * OUTLIER_LENGTH_PX * np.array([math.cos(angle), math.sin(angle)])
        out.append((center - half, center + half))
    return out


def _tracklets(
    observations: list[tuple[int, int, int, float, float]],
    length: int,
) -> list[TrajectoryRecord]:
    """Split each body point's observations into fixed-length tracklets.

    A tracklet also ends where the point leaves the view.
    """
    per_point: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
    for vid, j, k, x, y in observations:
        per_point.setdefault((vid, j), []).append((k, x, y))

    records = []
    next_id = 0
    for key in sorted(per_point):
        obs = sorted(per_point[key])
        chunk: list[tuple[int, float, float]] = []
        for item in obs:
            if chunk and (len(chunk) == length or item[0] != chunk[-1][0] + 1):
                if len(chunk) >= 2:
                    records += [
                        TrajectoryRecord(track_id=next_id, frame=k, x=x, y=y)
                        for k, x, y in chunk
                    ]
                    next_id += 1
                chunk = []
            chunk.append(item)
        if len(chunk) >= 2:
            records += [
                TrajectoryRecord(track_id=next_id, frame=k, x=x, y=y)
                for k, x, y in chunk
            ]
            next_id += 1
    return records
