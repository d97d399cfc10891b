"""Hand-marked road geometry in centered image coordinates."""

from dataclasses import dataclass, field

import numpy as np

from src.core.camera import ImagePoint


@dataclass(frozen=True)
class MeasuredSegment:
    """Two image points whose road distance was measured in meters."""

    p1: ImagePoint
    p2: ImagePoint
    meters: float

    def __post_init__(self) -> None:
        if not self.meters > 0:
            raise ValueError(f"measured distance must be positive, got {self.meters}")
        if self.p1 == self.p2:
            raise ValueError(f"segment endpoints coincide at {self.p1}")


@dataclass(frozen=True)
class GroundTruthMarking:
    """Marked lines and measured segments of one scene.

    ``lane_lines`` run towards VP1 and ``perpendicular_lines`` towards VP2.
    ``d1``/``d2`` are measured segments in those directions. The measurement
    line and lane boundaries are homogeneous lines.
    """

    lane_lines: list[tuple[ImagePoint, ImagePoint]] = field(default_factory=list)
    perpendicular_lines: list[tuple[ImagePoint, ImagePoint]] = field(
        default_factory=list
    )
    d1: list[MeasuredSegment] = field(default_factory=list)
    d2: list[MeasuredSegment] = field(default_factory=list)
    measurement_line: np.ndarray | None = None
    lane_boundaries: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        for p, q in (*self.lane_lines, *self.perpendicular_lines):
            if p == q:
                raise ValueError(f"marked line endpoints coincide at {p}")
