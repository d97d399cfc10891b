"""Per-frame detections and the vehicle tracks built from them."""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from src.core.bbox import BBox
from src.core.bounding_box_3d import BoundingBox3D
from src.core.camera import ImagePoint
from src.utils.constants import HULL_BBOX_TOLERANCE_PX, OTHER_CLASS


@dataclass(frozen=True)
class Detection:
    """One detector output in top-left pixel coordinates.

    Attributes:
        frame: Frame index.
        t: Timestamp in seconds.
        bbox: Detected rectangle.
        label: Fine-grained class id or ``"other"``.
        confidence: Class probability of ``label``.
        hull: ``(K, 2)`` foreground convex hull, if any.
    """

    frame: int
    t: float
    bbox: BBox
    label: str = OTHER_CLASS
    confidence: float = 1.0
    hull: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.hull is not None:
            hull = np.asarray(self.hull, dtype=float)
            box = self.bbox.dilated(HULL_BBOX_TOLERANCE_PX)
            inside = (
                (hull[:, 0] >= box.x)
                & (hull[:, 0] <= box.x2)
                & (hull[:, 1] >= box.y)
                & (hull[:, 1] <= box.y2)
            )
            if not inside.all():
                raise ValueError(
                    f"hull of frame {self.frame} detection leaves its bbox"
                )

    def centered_bbox(self, image_size: tuple[int, int]) -> BBox:
        w, h = image_size
        return BBox(
            self.bbox.x - w / 2.0, self.bbox.y - h / 2.0, self.bbox.w, self.bbox.h
        )

    def centered_hull(self, image_size: tuple[int, int]) -> np.ndarray | None:
        if self.hull is None:
            return None
        w, h = image_size
        return np.asarray(self.hull, dtype=float) - np.array([w / 2.0, h / 2.0])


@dataclass
class Track:
    """Detections of one vehicle plus everything derived from them.

    ``states`` holds the filtered ``(cx, cy, w, h, vx, vy)`` after each
    detection; ``reference_points`` pair a timestamp with a centered image
    point for every detection whose reference point could be built. ``lane``
    and ``crossing_time`` describe where and when the track passes the
    measurement line, if it does.
    """

    track_id: int
    detections: list[Detection] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    reference_points: list[tuple[float, ImagePoint]] = field(default_factory=list)
    boxes: list[BoundingBox3D | None] = field(default_factory=list)
    lane: int | None = None
    crossing_time: float | None = None

    def __len__(self) -> int:
        return len(self.detections)

    @property
    def timestamps(self) -> list[float]:
        return [d.t for d in self.detections]

    @property
    def class_posterior(self) -> dict[str, float]:
        """Mean per-detection class probability, labels never seen get nothing."""
        if not self.detections:
            return {}
        totals: dict[str, float] = defaultdict(float)
        for det in self.detections:
            totals[det.label] += det.confidence
        n = len(self.detections)
        return {label: total / n for label, total in sorted(totals.items())}

    @property
    def label(self) -> str:
        posterior = self.class_posterior
        if not posterior:
            return OTHER_CLASS
        return max(posterior.items(), key=lambda item: (item[1], item[0]))[0]

    def median_detection(self) -> Detection:
        """Detection at the median position along the track."""
        return self.detections[(len(self.detections) - 1) // 2]
