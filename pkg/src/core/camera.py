"""Traffic camera model built from two vanishing points.

Image coordinates are centered: the principal point is the origin, x grows to
the right and y grows downwards. A centered point ``p`` lifts onto the image
plane as ``p_bar = (x, y, f)``. The road plane is ``n . P + 1 = 0`` with unit
normal ``n``; the camera sits one pseudo-unit above it, so the scene scale is
the camera height in meters.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from src.core.errors import (
    BehindCamera,
    DegenerateVPs,
    HorizonPoint,
    MissingScale,
    NonPositiveRadicand,
)
from src.utils.constants import DEGENERATE_VP_DISTANCE, HORIZON_EPSILON


@dataclass(frozen=True)
class ImagePoint:
    """Centered image coordinates in pixels."""

    x: float
    y: float

    @classmethod
    def from_pixel(
        cls, px: float, py: float, image_size: tuple[int, int]
    ) -> "ImagePoint":
        """Convert top-left-origin pixel coordinates to centered ones."""
        width, height = image_size
        return cls(px - width / 2.0, py - height / 2.0)

    def to_pixel(self, image_size: tuple[int, int]) -> tuple[float, float]:
        width, height = image_size
        return self.x + width / 2.0, self.y + height / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def homogeneous(self) -> np.ndarray:
        return np.array([self.x, self.y, 1.0], dtype=float)

    def lift(self, f: float) -> np.ndarray:
        """Return the point on the image plane, ``(x, y, f)``."""
        return np.array([self.x, self.y, f], dtype=float)


@dataclass(frozen=True)
class GroundPoint:
    """Road-plane point in camera coordinates, in pseudo-units."""

    X: float
    Y: float
    Z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z], dtype=float)


@dataclass(frozen=True)
class RoadPlane:
    n: tuple[float, float, float]
    delta: float = 1.0

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.n, dtype=float)

    def contains(self, point: GroundPoint, rel_tol: float = 1e-9) -> bool:
        p = point.as_array()
        residual = float(self.normal @ p + self.delta)
        return abs(residual) <= rel_tol * max(1.0, float(np.linalg.norm(p)))


@dataclass(frozen=True)
class CameraCalibration:
    """Two vanishing points, focal length, road plane and optional scale.

    Attributes:
        vp1: Vanishing point of the traffic flow direction.
        vp2: Vanishing point perpendicular to the flow, in the road plane.
        f: Focal length in pixels.
        plane: Road plane with unit normal and ``delta = 1``.
        scale: Meters per road-plane pseudo-unit, ``None`` until inferred.
        image_size: ``(width, height)`` of the frames the calibration is for.
    """

    vp1: ImagePoint
    vp2: ImagePoint
    f: float
    plane: RoadPlane
    scale: float | None = None
    image_size: tuple[int, int] | None = None

    def with_scale(self, scale: float | None) -> "CameraCalibration":
        if scale is not None and not scale > 0:
            raise ValueError(f"scale must be positive, got {scale}")
        return replace(self, scale=scale)

    @property
    def normal(self) -> np.ndarray:
        return self.plane.normal

    def lift(self, p: ImagePoint) -> np.ndarray:
        return p.lift(self.f)

    def require_scale(self) -> float:
        if self.scale is None:
            raise MissingScale("calibration has no scene scale")
        return self.scale


def focal_from_vps(u: ImagePoint, v: ImagePoint) -> float:
    """Focal length implied by two orthogonal vanishing points.

    Only the x and y components enter the dot product.

    Raises:
        NonPositiveRadicand: If ``-(u_x v_x + u_y v_y) <= 0``.
    """
    radicand = -(u.x * v.x + u.y * v.y)
    if not radicand > 0:
        raise NonPositiveRadicand(
            f"vanishing points {u} and {v} give radicand {radicand:.6g}"
        )
    return math.sqrt(radicand)


def _orient_normal(n: np.ndarray) -> np.ndarray:
    # Road below the camera: pixels under the horizon must project forward.
    if n[1] > 0 or (n[1] == 0 and n[0] > 0):
        return -n
    return n


def calibration_from_vps(
    u: ImagePoint,
    v: ImagePoint,
    scale: float | None = None,
    image_size: tuple[int, int] | None = None,
) -> CameraCalibration:
    """Build the full calibration (scale optional) from two vanishing points.

    Raises:
        DegenerateVPs: If the points are closer than 1e-6 px.
        NonPositiveRadicand: If the pair implies an imaginary focal length.
    """
    if math.hypot(u.x - v.x, u.y - v.y) < DEGENERATE_VP_DISTANCE:
        raise DegenerateVPs(f"vanishing points coincide: {u}, {v}")
    f = focal_from_vps(u, v)
    w = np.cross(u.lift(f), v.lift(f))
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise DegenerateVPs(f"lifted vanishing points are parallel: {u}, {v}")
    n = _orient_normal(w / norm)
    calib = CameraCalibration(
        vp1=u,
        vp2=v,
        f=f,
        plane=RoadPlane(n=(float(n[0]), float(n[1]), float(n[2]))),
        image_size=image_size,
    )
    return calib.with_scale(scale) if scale is not None else calib


def project_to_road(p: ImagePoint, calib: CameraCalibration) -> GroundPoint:
    """Intersect the viewing ray of ``p`` with the road plane.

    Raises:
        HorizonPoint: If ``p`` lies on the horizon or above it.
    """
    p_bar = calib.lift(p)
    denom = float(calib.normal @ p_bar)
    if abs(denom) < HORIZON_EPSILON * float(np.linalg.norm(p_bar)):
        raise HorizonPoint(f"{p} lies on the horizon")
    if denom > 0:
        raise HorizonPoint(f"{p} lies above the horizon")
    P = (-calib.plane.delta / denom) * p_bar
    return GroundPoint(float(P[0]), float(P[1]), float(P[2]))


def project_to_road_many(
    xy: np.ndarray, calib: CameraCalibration, *, strict: bool = True
) -> np.ndarray:
    """Vectorized :func:`project_to_road` for an ``(N, 2)`` array.

    With ``strict=False`` unmeasurable points come back as NaN rows instead
    of raising.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    p_bar = np.column_stack([xy, np.full(len(xy), calib.f)])
    denom = p_bar @ calib.normal
    bad = (np.abs(denom) < HORIZON_EPSILON * np.linalg.norm(p_bar, axis=1)) | (
        denom > 0
    )
    if strict and bad.any():
        raise HorizonPoint(f"{int(bad.sum())} point(s) on or above the horizon")
    with np.errstate(divide="ignore", invalid="ignore"):
        P = (-calib.plane.delta / denom)[:, None] * p_bar
    P[bad] = np.nan
    return P


def ground_distance(
    p1: ImagePoint, p2: ImagePoint, calib: CameraCalibration
) -> float:
    """Metric distance between the road projections of two image points."""
    scale = calib.require_scale()
    P1 = project_to_road(p1, calib).as_array()
    P2 = project_to_road(p2, calib).as_array()
    return scale * float(np.linalg.norm(P1 - P2))


def rotation_from_vps(calib: CameraCalibration) -> np.ndarray:
    """Rotation whose columns are the flow, cross-flow and normal directions.

    Column 1 is the normalized lifted VP1, column 2 the lifted VP2 made
    orthogonal to column 1, column 3 their cross product (``det = +1``).
    """
    u_bar = calib.lift(calib.vp1)
    v_bar = calib.lift(calib.vp2)
    r1 = u_bar / np.linalg.norm(u_bar)
    r2 = v_bar - (v_bar @ r1) * r1
    norm = float(np.linalg.norm(r2))
    if norm < 1e-12:
        raise DegenerateVPs("lifted vanishing points are parallel")
    r2 = r2 / norm
    r3 = np.cross(r1, r2)
    return np.column_stack([r1, r2, r3])


def viewpoint_vector(b: ImagePoint, calib: CameraCalibration) -> np.ndarray:
    """Unit direction from the vehicle at ``b`` towards the camera.

    Expressed in the frame of :func:`rotation_from_vps`.
    """
    R = rotation_from_vps(calib)
    phi = -R.T @ calib.lift(b)
    return phi / np.linalg.norm(phi)


def third_vp(calib: CameraCalibration) -> np.ndarray:
    """Homogeneous image of the road normal direction (VP3)."""
    n = calib.normal
    return np.array([calib.f * n[0], calib.f * n[1], n[2]])


def horizon_line(calib: CameraCalibration) -> np.ndarray:
    """Homogeneous horizon line through VP1 and VP2, unit ``(a, b)`` part."""
    line = np.cross(calib.vp1.homogeneous(), calib.vp2.homogeneous())
    return line / np.linalg.norm(line[:2])


def project_to_image(points: np.ndarray, f: float) -> np.ndarray:
    """Perspective projection of camera-frame points ``(N, 3)`` to ``(N, 2)``.

    Raises:
        BehindCamera: If any point has non-positive depth.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts[:, 2] <= 0):
        raise BehindCamera(f"{int(np.sum(pts[:, 2] <= 0))} point(s) behind camera")
    return f * pts[:, :2] / pts[:, 2:3]
