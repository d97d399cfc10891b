"""Axis-aligned image rectangles."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Rectangle ``[x, x + w] x [y, y + h]`` in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"bbox must have positive area, got {self}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "BBox":
        pts = np.asarray(points, dtype=float)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        return cls.from_corners(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def bottom_center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y2

    def contains(self, other: "BBox") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def dilated(self, margin: float) -> "BBox":
        return BBox(
            self.x - margin, self.y - margin, self.w + 2 * margin, self.h + 2 * margin
        )

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
