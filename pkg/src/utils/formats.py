"""Versioned interchange files: schemas, readers and writers.

Every file carries a version tag; JSON lines files carry it in a header
record on their first line. Reads validate with pydantic and raise
:class:`SchemaError`; writes are atomic.
"""

import csv
import io
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Literal, TypeVar

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.core.bbox import BBox
from src.core.camera import CameraCalibration, ImagePoint, calibration_from_vps
from src.core.edgelet import Edgelet
from src.core.errors import AutocalibError, SchemaError
from src.core.markings import GroundTruthMarking, MeasuredSegment
from src.core.track import Detection, Track
from src.core.wireframe import WireframeModel
from src.utils import constants as c
from src.utils.paths import atomic_write_text, resource_path

Point2 = tuple[float, float]
Segment2 = tuple[Point2, Point2]

M = TypeVar("M", bound=BaseModel)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# --- calibration -----------------------------------------------------------


class CalibrationFile(_Strict):
    version: Literal["autocalib-calibration/1"] = c.CALIBRATION_VERSION
    vp1: Point2
    vp2: Point2
    principal_point: Point2
    focal_px: float = Field(gt=0)
    scale_m_per_unit: float | None = Field(default=None, gt=0)
    image_size: tuple[int, int]


def calibration_to_file(calib: CameraCalibration) -> CalibrationFile:
    if calib.image_size is None:
        raise ValueError("calibration has no image size to export")
    return CalibrationFile(
        vp1=calib.vp1.to_pixel(calib.image_size),
        vp2=calib.vp2.to_pixel(calib.image_size),
        principal_point=(calib.image_size[0] / 2.0, calib.image_size[1] / 2.0),
        focal_px=calib.f,
        scale_m_per_unit=calib.scale,
        image_size=calib.image_size,
    )


def calibration_from_file(data: CalibrationFile) -> CameraCalibration:
    """Rebuild the calibration; the stored focal length must agree with the VPs."""
    cx, cy = data.principal_point
    u = ImagePoint(data.vp1[0] - cx, data.vp1[1] - cy)
    v = ImagePoint(data.vp2[0] - cx, data.vp2[1] - cy)
    try:
        calib = calibration_from_vps(u, v, data.scale_m_per_unit, data.image_size)
    except AutocalibError as e:
        raise SchemaError(f"calibration vanishing points are invalid: {e}") from e
    if abs(calib.f - data.focal_px) > 1e-6 * data.focal_px:
        raise SchemaError(
            f"focal_px {data.focal_px} disagrees with vanishing points ({calib.f})"
        )
    return calib


def save_calibration(path: str | Path, calib: CameraCalibration) -> None:
    _write_model(path, calibration_to_file(calib))


def load_calibration(path: str | Path) -> CameraCalibration:
    return calibration_from_file(_read_model(path, CalibrationFile))


# --- scene -----------------------------------------------------------------


class CameraSpec(_Strict):
    focal_px: float = Field(gt=0)
    tilt_deg: float = Field(gt=0, lt=90)
    pan_deg: float = Field(ge=-80, le=80)
    roll_deg: float = 0.0
    height_m: float = Field(gt=0)
    lateral_offset_m: float = 0.0


class LaneSpec(_Strict):
    count: int = Field(ge=1)
    width_m: float = Field(gt=0)


class VehicleSpec(_Strict):
    model_id: str
    speed_kmh: float = Field(gt=0)
    lane: int = Field(ge=0)
    entry_time_s: float = Field(ge=0)
    length_m: float | None = Field(default=None, gt=0)
    label: str | None = None
    ghost: bool = False


class NoiseSpec(_Strict):
    trajectory_sigma_px: float = Field(default=0.0, ge=0)
    edge_outlier_fraction: float = Field(default=0.0, ge=0, lt=1)
    bbox_jitter_px: float = Field(default=0.0, ge=0)


class SceneConfig(_Strict):
    """Synthetic scene: camera, road, vehicles and noise.

    World frame: X along the road, Y to the left, Z up; the camera sits at
    ``(0, lateral_offset_m, height_m)``. Lane ``k`` is centered at
    ``Y = -(k + 0.5) * width_m``. Vehicles in even lanes drive away from the
    camera, odd lanes towards it unless ``one_way`` is set.
    """

    version: Literal["autocalib-scene/1"] = c.SCENE_VERSION
    camera: CameraSpec
    image_size: tuple[int, int]
    lanes: LaneSpec
    vehicles: list[VehicleSpec] = Field(default_factory=list)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    frame_rate: float = Field(default=25.0, gt=0)
    duration_s: float = Field(gt=0)
    road_start_m: float = Field(default=10.0, gt=0)
    road_end_m: float = Field(default=90.0, gt=0)
    measurement_line_m: float = Field(default=20.0, gt=0)
    one_way: bool = True
    tracklet_frames: int = Field(default=20, ge=2)
    points_per_vehicle: int = Field(default=12, ge=1)
    render_frames: int = Field(default=40, ge=0)

    @field_validator("image_size")
    @classmethod
    def _min_size(cls, value: tuple[int, int]) -> tuple[int, int]:
        if min(value) < c.MIN_IMAGE_SIZE:
            raise ValueError(f"image must be at least {c.MIN_IMAGE_SIZE}px per side")
        return value


def load_scene(path: str | Path) -> SceneConfig:
    return _read_model(path, SceneConfig)


def save_scene(path: str | Path, scene: SceneConfig) -> None:
    _write_model(path, scene)


class MarkedSegment(_Strict):
    p1: Point2
    p2: Point2
    meters: float = Field(gt=0)


class MarkingsFile(_Strict):
    """Road markings in top-left pixels.

    ``d1`` segments run towards VP1, ``d2`` towards VP2. Lane boundaries are
    ordered so that lane ``k`` lies between boundaries ``k`` and ``k + 1``.
    """

    version: Literal["autocalib-markings/1"] = c.MARKINGS_VERSION
    image_size: tuple[int, int]
    lane_lines: list[Segment2] = Field(default_factory=list)
    perpendicular_lines: list[Segment2] = Field(default_factory=list)
    d1: list[MarkedSegment] = Field(default_factory=list)
    d2: list[MarkedSegment] = Field(default_factory=list)
    measurement_line: Segment2
    lane_boundaries: list[Segment2] = Field(default_factory=list)


def load_markings(path: str | Path) -> MarkingsFile:
    return _read_model(path, MarkingsFile)


def save_markings(path: str | Path, markings: MarkingsFile) -> None:
    _write_model(path, markings)


def markings_from_file(data: MarkingsFile) -> GroundTruthMarking:
    """Markings in centered coordinates; lines become homogeneous."""
    size = data.image_size

    def point(p: Point2) -> ImagePoint:
        return ImagePoint.from_pixel(p[0], p[1], size)

    def pair(seg: Segment2) -> tuple[ImagePoint, ImagePoint]:
        return point(seg[0]), point(seg[1])

    def line(seg: Segment2) -> np.ndarray:
        p, q = pair(seg)
        return np.cross(p.homogeneous(), q.homogeneous())

    try:
        return GroundTruthMarking(
            lane_lines=[pair(s) for s in data.lane_lines],
            perpendicular_lines=[pair(s) for s in data.perpendicular_lines],
            d1=[MeasuredSegment(point(s.p1), point(s.p2), s.meters) for s in data.d1],
            d2=[MeasuredSegment(point(s.p1), point(s.p2), s.meters) for s in data.d2],
            measurement_line=line(data.measurement_line),
            lane_boundaries=[line(s) for s in data.lane_boundaries],
        )
    except ValueError as e:
        raise SchemaError(f"invalid markings: {e}") from e


class VehiclePass(_Strict):
    vehicle_id: int
    lane: int
    crossing_time_s: float
    speed_kmh: float = Field(gt=0)
    model_id: str


class OcclusionInterval(_Strict):
    vehicle_id: int
    frames: list[int]


class SceneTruth(_Strict):
    version: Literal["autocalib-truth/1"] = c.TRUTH_VERSION
    calibration: CalibrationFile
    vp3: tuple[float, float, float]
    passes: list[VehiclePass] = Field(default_factory=list)
    occlusions: list[OcclusionInterval] = Field(default_factory=list)
    duration_s: float = Field(gt=0)


def load_truth(path: str | Path) -> SceneTruth:
    return _read_model(path, SceneTruth)


def save_truth(path: str | Path, truth: SceneTruth) -> None:
    _write_model(path, truth)


# --- wireframes and regression ---------------------------------------------


class WireframeFile(_Strict):
    version: Literal["autocalib-wireframe/1"] = c.WIREFRAME_VERSION
    id: str
    length_m: float = Field(gt=0)
    vertices: list[tuple[float, float, float]]
    edges: list[tuple[int, int]]
    anchor_front: int
    anchor_rear: int


def wireframe_to_file(model: WireframeModel) -> WireframeFile:
    return WireframeFile(
        id=model.model_id,
        length_m=model.length_m,
        vertices=[tuple(float(v) for v in row) for row in model.vertices],
        edges=list(model.edges),
        anchor_front=model.anchor_front,
        anchor_rear=model.anchor_rear,
    )


def load_wireframe(path: str | Path) -> WireframeModel:
    data = _read_model(path, WireframeFile)
    try:
        return WireframeModel(
            model_id=data.id,
            length_m=data.length_m,
            vertices=np.array(data.vertices, dtype=float),
            edges=tuple(data.edges),
            anchor_front=data.anchor_front,
            anchor_rear=data.anchor_rear,
        )
    except ValueError as e:
        raise SchemaError(f"{path}: {e}") from e


def save_wireframe(path: str | Path, model: WireframeModel) -> None:
    _write_model(path, wireframe_to_file(model))


def load_models(specs: Iterable[str]) -> dict[str, WireframeModel]:
    """Load models by shipped id (``combi``) or by JSON path."""
    models: dict[str, WireframeModel] = {}
    for spec in specs:
        path = Path(spec)
        if not path.suffix:
            path = Path(resource_path(f"assets/models/{spec}.json"))
        model = load_wireframe(path)
        models[model.model_id] = model
    return models


class RegressionFile(_Strict):
    version: Literal["autocalib-regression/1"] = c.REGRESSION_VERSION
    alpha: float
    beta: float
    pairs: list[tuple[float, float]] = Field(default_factory=list)


def load_regression(path: str | Path) -> RegressionFile:
    return _read_model(path, RegressionFile)


def save_regression(path: str | Path, regression: RegressionFile) -> None:
    _write_model(path, regression)


# --- JSON lines ------------------------------------------------------------


class _Header(BaseModel):
    model_config = ConfigDict(extra="allow")
    version: str


class TrajectoryRecord(_Strict):
    track_id: int
    frame: int
    x: float
    y: float


class DetectionRecord(_Strict):
    frame: int
    t: float
    bbox: tuple[float, float, float, float]
    label: str = Field(default=c.OTHER_CLASS, alias="class")
    confidence: float = Field(default=1.0, ge=0, le=1)
    hull: list[Point2] | None = None


class ReferencePointRecord(_Strict):
    t: float
    x: float
    y: float


class TrackRecord(_Strict):
    track_id: int
    label: str = Field(alias="class")
    posterior: dict[str, float] = Field(default_factory=dict)
    detections: list[DetectionRecord]
    reference_points: list[ReferencePointRecord] = Field(default_factory=list)


class EdgeletRecord(_Strict):
    x: float
    y: float
    dx: float
    dy: float
    quality: float = Field(ge=1)


def _read_jsonl(
    path: str | Path, version: str, record: type[M]
) -> tuple[dict[str, Any], list[M]]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise SchemaError(f"{path} is empty, expected a {version} header")
    try:
        header = _Header.model_validate_json(lines[0])
    except ValidationError as e:
        raise SchemaError(f"{path}: bad header: {e}") from e
    if header.version != version:
        raise SchemaError(f"{path}: version {header.version!r}, expected {version!r}")
    records: list[M] = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            records.append(record.model_validate_json(line))
        except ValidationError as e:
            raise SchemaError(f"{path}:{lineno}: {e}") from e
    return header.model_dump(), records


def _write_jsonl(
    path: str | Path,
    version: str,
    records: Iterable[BaseModel],
    **header: Any,
) -> None:
    out = [json.dumps({"version": version, **header})]
    out += [r.model_dump_json(by_alias=True) for r in records]
    atomic_write_text(path, "\n".join(out) + "\n")


def load_trajectories(
    path: str | Path, image_size: tuple[int, int]
) -> dict[int, list[tuple[int, ImagePoint]]]:
    """Tracklets keyed by id, observations converted to centered coordinates."""
    _, records = _read_jsonl(path, c.TRAJECTORIES_VERSION, TrajectoryRecord)
    tracklets: dict[int, list[tuple[int, ImagePoint]]] = {}
    for r in records:
        tracklets.setdefault(r.track_id, []).append(
            (r.frame, ImagePoint.from_pixel(r.x, r.y, image_size))
        )
    return tracklets


def save_trajectories(path: str | Path, records: Sequence[TrajectoryRecord]) -> None:
    _write_jsonl(path, c.TRAJECTORIES_VERSION, records)


def _detection_from_record(r: DetectionRecord) -> Detection:
    hull = np.array(r.hull, dtype=float) if r.hull else None
    try:
        return Detection(
            frame=r.frame,
            t=r.t,
            bbox=BBox(*r.bbox),
            label=r.label,
            confidence=r.confidence,
            hull=hull,
        )
    except ValueError as e:
        raise SchemaError(f"detection in frame {r.frame}: {e}") from e


def _detection_to_record(d: Detection) -> DetectionRecord:
    return DetectionRecord(
        frame=d.frame,
        t=d.t,
        bbox=(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h),
        label=d.label,
        confidence=d.confidence,
        hull=(
            [(float(p[0]), float(p[1])) for p in d.hull] if d.hull is not None else None
        ),
    )


def load_detections(path: str | Path) -> dict[int, list[Detection]]:
    """Detections grouped by frame; timestamps must increase with the frame."""
    _, records = _read_jsonl(path, c.DETECTIONS_VERSION, DetectionRecord)
    by_frame: dict[int, list[Detection]] = {}
    for r in records:
        by_frame.setdefault(r.frame, []).append(_detection_from_record(r))
    last_t = -np.inf
    for frame in sorted(by_frame):
        times = {d.t for d in by_frame[frame]}
        if len(times) != 1 or min(times) <= last_t:
            raise SchemaError(f"{path}: timestamps not strictly increasing at {frame}")
        last_t = min(times)
    return by_frame


def save_detections(path: str | Path, detections: Iterable[Detection]) -> None:
    _write_jsonl(
        path, c.DETECTIONS_VERSION, (_detection_to_record(d) for d in detections)
    )


def save_tracks(
    path: str | Path, tracks: Sequence[Track], image_size: tuple[int, int]
) -> None:
    records = []
    for track in tracks:
        refs = []
        for t, p in track.reference_points:
            px, py = p.to_pixel(image_size)
            refs.append(ReferencePointRecord(t=t, x=px, y=py))
        records.append(
            TrackRecord(
                track_id=track.track_id,
                label=track.label,
                posterior=track.class_posterior,
                detections=[_detection_to_record(d) for d in track.detections],
                reference_points=refs,
            )
        )
    _write_jsonl(path, c.TRACKS_VERSION, records, image_size=list(image_size))


def load_tracks(path: str | Path) -> list[Track]:
    header, records = _read_jsonl(path, c.TRACKS_VERSION, TrackRecord)
    try:
        image_size = (int(header["image_size"][0]), int(header["image_size"][1]))
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise SchemaError(f"{path}: header lacks image_size") from e
    tracks = []
    for r in records:
        track = Track(track_id=r.track_id)
        track.detections = [_detection_from_record(d) for d in r.detections]
        track.reference_points = [
            (p.t, ImagePoint.from_pixel(p.x, p.y, image_size))
            for p in r.reference_points
        ]
        tracks.append(track)
    return tracks


def save_edgelets(
    path: str | Path, edgelets: Sequence[Edgelet], image_size: tuple[int, int]
) -> None:
    records = []
    for e in edgelets:
        px, py = e.seed.to_pixel(image_size)
        records.append(
            EdgeletRecord(
                x=px, y=py, dx=e.direction[0], dy=e.direction[1], quality=e.quality
            )
        )
    _write_jsonl(path, c.EDGELETS_VERSION, records, image_size=list(image_size))


def load_edgelets(path: str | Path) -> tuple[list[Edgelet], tuple[int, int]]:
    header, records = _read_jsonl(path, c.EDGELETS_VERSION, EdgeletRecord)
    try:
        image_size = (int(header["image_size"][0]), int(header["image_size"][1]))
    except (KeyError, TypeError, IndexError, ValueError) as e:
        raise SchemaError(f"{path}: header lacks image_size") from e
    edgelets = [
        Edgelet(
            seed=ImagePoint.from_pixel(r.x, r.y, image_size),
            direction=(r.dx, r.dy),
            quality=r.quality,
        )
        for r in records
    ]
    return edgelets, image_size


# --- reports ---------------------------------------------------------------


class SummaryBlock(_Strict):
    mean: float
    median: float
    p99: float


class ErrorSummaryFile(_Strict):
    abs: SummaryBlock
    rel: SummaryBlock | None = None
    count: int


class CountingFile(_Strict):
    matched: int
    false_positives: int
    missed: int
    recall: float
    fppm: float


class SystemReport(_Strict):
    supervision: str
    calibration_source: str
    scale_source: str
    ratio_error: ErrorSummaryFile | None = None
    distance_error_vp1: ErrorSummaryFile | None = None
    distance_error_all: ErrorSummaryFile | None = None
    speed_error: ErrorSummaryFile | None = None
    counting: CountingFile | None = None
    scale_m_per_unit: float | None = None


class ReportFile(_Strict):
    version: Literal["autocalib-report/1"] = c.REPORT_VERSION
    systems: dict[str, SystemReport]


def save_report(path: str | Path, report: ReportFile) -> None:
    _write_model(path, report)


def load_report(path: str | Path) -> ReportFile:
    return _read_model(path, ReportFile)


def write_csv(
    path: str | Path, header: Sequence[str], rows: Iterable[Sequence]
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def save_json(path: str | Path, data: dict) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- plumbing --------------------------------------------------------------


def _read_model(path: str | Path, model: type[M]) -> M:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SchemaError(f"cannot read {path}: {e}") from e
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        raise SchemaError(f"{path}: {e}") from e


def _write_model(path: str | Path, model: BaseModel) -> None:
    atomic_write_text(path, model.model_dump_json(indent=2, by_alias=True) + "\n")
    logger.debug(f"Wrote {type(model).__name__} to {path}")
