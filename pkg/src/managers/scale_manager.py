"""Scene scale from wireframe models aligned to detected boxes."""

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.stats import linregress, norm

from src.core.bbox import BBox, iou
from src.core.bounding_box_3d import BoundingBox3D
from src.core.camera import (
    CameraCalibration,
    ImagePoint,
    project_to_image,
    project_to_road,
)
from src.core.errors import (
    BehindCamera,
    DegenerateFit,
    EmptySamples,
    HorizonPoint,
    NoModelsMatched,
)
from src.core.track import Track
from src.core.wireframe import WireframeModel
from src.managers.settings_manager import SettingsManager
from src.managers.track_manager import is_receding
from src.utils.constants import OTHER_CLASS


@dataclass(frozen=True)
class RenderedModel:
    bbox: BBox
    front: ImagePoint
    rear: ImagePoint


@dataclass(frozen=True)
class ScaleSample:
    """One candidate scale of one vehicle and how well it fits."""

    scale: float
    score: float
    instance: int
    index: int


@dataclass(frozen=True)
class ScaleEstimate:
    """KDE mode of the scale samples and its regression-corrected value."""

    scale: float
    scale_reg: float
    alpha: float
    beta: float
    sample_count: int
    grid: np.ndarray
    density: np.ndarray

    def as_dict(self) -> dict:
        return {
            "scale": self.scale,
            "scale_reg": self.scale_reg,
            "alpha": self.alpha,
            "beta": self.beta,
            "samples": self.sample_count,
            "density": [[float(x), float(y)] for x, y in zip(self.grid, self.density)],
        }


def road_frame(
    calib: CameraCalibration, receding: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit vehicle axes (front, left, up) in camera coordinates."""
    u_bar = calib.lift(calib.vp1)
    e1 = u_bar / np.linalg.norm(u_bar)
    if not receding:
        e1 = -e1
    e3 = calib.normal
    e2 = np.cross(e3, e1)
    return e1, e2, e3


def rendered_bbox(
    model: WireframeModel,
    base_center: ImagePoint,
    scale: float,
    calib: CameraCalibration,
    receding: bool = True,
) -> RenderedModel:
    """Project ``model`` standing at ``base_center`` for a candidate scale.

    The footprint center sits on the road under ``base_center`` and the
    model faces along the VP1 direction. Returns the axis-aligned box of
    all projected vertices and the projected anchors.

    Raises:
        HorizonPoint: If ``base_center`` does not reach the road.
        BehindCamera: If a vertex ends up behind the camera.
    """
    origin = project_to_road(base_center, calib).as_array()
    e1, e2, e3 = road_frame(calib, receding)
    axes = np.column_stack([e1, e2, e3])
    points = origin + (np.asarray(model.vertices, dtype=float) @ axes.T) / scale
    image = project_to_image(points, calib.f)
    front = image[model.anchor_front]
    rear = image[model.anchor_rear]
    return RenderedModel(
        bbox=BBox.from_points(image),
        front=ImagePoint(float(front[0]), float(front[1])),
        rear=ImagePoint(float(rear[0]), float(rear[1])),
    )


def anchor_scale(
    model: WireframeModel, rendered: RenderedModel, calib: CameraCalibration
) -> float:
    """Meters per pseudo-unit implied by the projected anchors."""
    F = project_to_road(rendered.front, calib).as_array()
    R = project_to_road(rendered.rear, calib).as_array()
    return model.length_m / float(np.linalg.norm(F - R))


def kde_argmax(
    values: np.ndarray, weights: np.ndarray, grid_size: int
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mode of a weighted Gaussian KDE on a regular grid.

    Bandwidth follows the normal reference rule ``1.06 * sigma * n**-0.2``
    with the weighted standard deviation. The grid maximum (first one on
    ties) is refined by a parabola through its neighbours.

    Raises:
        EmptySamples: Without samples or with zero total weight.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0 or not weights.sum() > 0:
        raise EmptySamples("no scale samples to estimate a density from")
    mean = np.average(values, weights=weights)
    sigma = float(np.sqrt(np.average((values - mean) ** 2, weights=weights)))
    if sigma == 0.0 or np.all(values == values[0]):
        value = float(values[0])
        return value, np.array([value]), np.array([float(weights.sum())])
    h = 1.06 * sigma * values.size ** (-0.2)
    grid = np.linspace(values.min() - 3 * h, values.max() + 3 * h, grid_size)
    kernel = norm.pdf((grid[:, None] - values[None, :]) / h)
    density = kernel @ weights / (h * weights.sum())
    k = int(np.argmax(density))
    best = float(grid[k])
    if 0 < k < grid_size - 1:
        y0, y1, y2 = density[k - 1], density[k], density[k + 1]
        curvature = y0 - 2.0 * y1 + y2
        if curvature < 0:
            best += 0.5 * (y0 - y2) / curvature * float(grid[1] - grid[0])
    return best, grid, density


def fit_scale_regression(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares ``scale_true ~ alpha * scale_est + beta``.

    Raises:
        DegenerateFit: With fewer than two pairs or identical estimates.
    """
    if len(pairs) < 2:
        raise DegenerateFit(f"need at least two scenes, got {len(pairs)}")
    est = np.array([p[0] for p in pairs], dtype=float)
    truth = np.array([p[1] for p in pairs], dtype=float)
    if np.all(est == est[0]):
        raise DegenerateFit("all scale estimates are equal")
    fit = linregress(est, truth)
    logger.info(
        f"Scale regression alpha={fit.slope:.6f}, beta={fit.intercept:.6g} "
        f"from {len(pairs)} scene(s)"
    )
    return float(fit.slope), float(fit.intercept)


def _track_box(track: Track) -> tuple[int, BoundingBox3D] | None:
    """Median detection index with a 3D box, searching outward if needed."""
    if not track.boxes:
        return None
    mid = (len(track.detections) - 1) // 2
    for offset in range(len(track.boxes)):
        for k in (mid - offset, mid + offset):
            if 0 <= k < len(track.boxes) and track.boxes[k] is not None:
                return k, track.boxes[k]  # type: ignore[return-value]
    return None


class ScaleManager:
    """Sweeps candidate scales over classified tracks and takes the KDE mode."""

    def __init__(self, settings: SettingsManager, image_size: tuple[int, int]) -> None:
        self.settings = settings
        self.image_size = image_size
        self.diagnostics: dict = {}

    def _instances(
        self, tracks: Sequence[Track], models: Mapping[str, WireframeModel]
    ) -> list[tuple[Track, WireframeModel, int, BoundingBox3D]]:
        instances = []
        for track in tracks:
            label = track.label
            if label == OTHER_CLASS or label not in models:
                continue
            found = _track_box(track)
            if found is None:
                logger.debug(f"Track {track.track_id} has no 3D box; skipped")
                continue
            instances.append((track, models[label], *found))
        return instances

    def scale_grid(
        self,
        tracks: Sequence[Track],
        models: Mapping[str, WireframeModel],
        calib: CameraCalibration,
    ) -> np.ndarray:
        """Log-spaced candidates around the scale the first box length implies.

        Raises:
            NoModelsMatched: Without a classified track carrying a 3D box.
        """
        instances = self._instances(tracks, models)
        if not instances:
            raise NoModelsMatched("no track is classified as a known model")
        _, model, _, box = instances[0]
        A = project_to_road(ImagePoint(*box.base[0]), calib).as_array()
        B1 = project_to_road(ImagePoint(*box.base[1]), calib).as_array()
        prior = model.length_m / float(np.linalg.norm(A - B1))
        span = self.settings.scale_grid_span
        return np.geomspace(
            prior * (1.0 - span), prior * (1.0 + span), self.settings.scale_grid_size
        )

    def collect_scale_samples(
        self,
        tracks: Sequence[Track],
        models: Mapping[str, WireframeModel],
        calib: CameraCalibration,
        grid: np.ndarray | None = None,
    ) -> list[ScaleSample]:
        """Samples whose rendered box overlaps the detection above the threshold.

        Raises:
            NoModelsMatched: If no track is classified as one of ``models``.
        """
        instances = self._instances(tracks, models)
        if not instances:
            raise NoModelsMatched("no track is classified as a known model")
        if grid is None:
            grid = self.scale_grid(tracks, models, calib)
        threshold = self.settings.iou_threshold

        def sweep(item: tuple[Track, WireframeModel, int, BoundingBox3D]) -> list:
            track, model, k, box = item
            detected = track.detections[k].centered_bbox(self.image_size)
            b = ImagePoint(*box.base_center)
            receding = is_receding(track, calib, self.image_size)
            found = []
            for j, scale in enumerate(grid):
                try:
                    rendered = rendered_bbox(model, b, float(scale), calib, receding)
                    score = iou(rendered.bbox, detected)
                    if score > threshold:
                        lam = anchor_scale(model, rendered, calib)
                        found.append(ScaleSample(lam, score, track.track_id, j))
                except (BehindCamera, HorizonPoint) as e:
                    logger.trace(f"Track {track.track_id}, scale {scale:.4g}: {e}")
            return found

        with ThreadPoolExecutor(max_workers=self.settings.threads) as pool:
            batches = list(pool.map(sweep, instances))
        samples = [s for batch in batches for s in batch]
        self.diagnostics = {
            "instances": len(instances),
            "median_frames": {
                str(track.track_id): track.detections[k].frame
                for track, _, k, _ in instances
            },
            "grid": [float(grid[0]), float(grid[-1]), len(grid)],
            "samples": len(samples),
        }
        logger.info(
            f"Collected {len(samples)} scale sample(s) from "
            f"{len(instances)} vehicle(s)"
        )
        return samples

    def infer_scale(
        self,
        tracks: Sequence[Track],
        models: Mapping[str, WireframeModel],
        calib: CameraCalibration,
        regression: tuple[float, float] | None = None,
    ) -> ScaleEstimate:
        """KDE mode of the samples, optionally regression-corrected."""
        samples = self.collect_scale_samples(tracks, models, calib)
        if not samples:
            raise EmptySamples(
                f"no rendered model overlaps its detection above IoU "
                f"{self.settings.iou_threshold}"
            )
        values = np.array([s.scale for s in samples])
        weights = np.array([s.score for s in samples])
        scale, grid, density = kde_argmax(values, weights, self.settings.kde_grid_size)
        alpha, beta = regression if regression is not None else (1.0, 0.0)
        estimate = ScaleEstimate(
            scale=scale,
            scale_reg=alpha * scale + beta,
            alpha=alpha,
            beta=beta,
            sample_count=len(samples),
            grid=grid,
            density=density,
        )
        logger.info(
            f"Scale estimate {estimate.scale:.6g} m/unit "
            f"(corrected {estimate.scale_reg:.6g}) from {len(samples)} samples"
        )
        return estimate
