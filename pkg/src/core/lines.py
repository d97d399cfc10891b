"""Image lines and the trajectory segments that vote for them."""

import math
from dataclasses import dataclass

import numpy as np

from src.core.camera import ImagePoint


@dataclass(frozen=True)
class LineObservation:
    """Line ``a x + b y + c = 0`` in centered coordinates with ``a^2 + b^2 = 1``."""

    a: float
    b: float
    c: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if abs(self.a * self.a + self.b * self.b - 1.0) > 1e-9:
            raise ValueError(f"line normal is not unit length: ({self.a}, {self.b})")
        if not self.weight >= 0:
            raise ValueError(f"negative line weight {self.weight}")

    @classmethod
    def from_homogeneous(
        cls, line: np.ndarray, weight: float = 1.0
    ) -> "LineObservation":
        a, b, c = (float(v) for v in line)
        norm = math.hypot(a, b)
        if norm == 0.0:
            raise ValueError("degenerate line with zero normal")
        return cls(a / norm, b / norm, c / norm, weight)

    @classmethod
    def through(
        cls, p: ImagePoint, q: ImagePoint, weight: float = 1.0
    ) -> "LineObservation":
        return cls.from_homogeneous(np.cross(p.homogeneous(), q.homogeneous()), weight)

    @classmethod
    def along(
        cls, s: ImagePoint, d: tuple[float, float], weight: float = 1.0
    ) -> "LineObservation":
        """Line through ``s`` with direction ``d``."""
        dx, dy = d
        return cls.from_homogeneous(
            np.array([-dy, dx, dy * s.x - dx * s.y]), weight
        )

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def distance(self, p: ImagePoint) -> float:
        return abs(self.a * p.x + self.b * p.y + self.c)


@dataclass(frozen=True)
class TrajectorySegment:
    """Displacement of one tracked point between two frames."""

    p_start: ImagePoint
    p_end: ImagePoint
    frame_start: int
    frame_end: int
    weight: float = 1.0

    @property
    def length(self) -> float:
        return math.hypot(self.p_end.x - self.p_start.x, self.p_end.y - self.p_start.y)

    def to_line(self) -> LineObservation:
        return LineObservation.through(self.p_start, self.p_end, self.weight)


def segments_from_tracklets(
    tracklets: dict[int, list[tuple[int, ImagePoint]]],
    min_displacement: float,
) -> list[TrajectorySegment]:
    """One segment per tracklet, from its first to its last observation.

    Segments shorter than ``min_displacement`` are dropped. Weight is the
    displacement length.
    """
    segments: list[TrajectorySegment] = []
    for track_id in sorted(tracklets):
        points = sorted(tracklets[track_id], key=lambda item: item[0])
        if len(points) < 2:
            continue
        (f0, p0), (f1, p1) = points[0], points[-1]
        length = math.hypot(p1.x - p0.x, p1.y - p0.y)
        if length < min_displacement:
            continue
        segments.append(TrajectorySegment(p0, p1, f0, f1, weight=length))
    return segments


def intersect(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    """Homogeneous intersection of two homogeneous lines."""
    return np.cross(l1, l2)


def line_through(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Homogeneous line through two homogeneous points."""
    return np.cross(p, q)


def to_euclidean(p: np.ndarray) -> np.ndarray:
    return p[:2] / p[2]


def point_line_distance(p: ImagePoint, line: np.ndarray) -> float:
    """Distance from ``p`` to a homogeneous line."""
    return abs(float(line @ p.homogeneous())) / math.hypot(line[0], line[1])
