"""Image-space 3D bounding boxes from tangent lines through the three VPs.

Every box edge points at one vanishing point. For each VP the two tangent
lines to the vehicle's convex hull are found; the base tangent is the one
whose contact point lies further along the image "down" direction. The
lowest base corner ``A`` is where the VP1 and VP2 base tangents meet, the
two side base corners sit on the VP3 tangents and the hidden corner closes
the base parallelogram through VP1 and VP2. The upper tangents give the top
face the same way.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from src.core.camera import CameraCalibration, third_vp
from src.core.errors import DegenerateHull, TangentFailure


@dataclass(frozen=True)
class BoundingBox3D:
    """Eight image corners plus the vanishing points they were built from.

    Attributes:
        base: ``(4, 2)`` corners ``A, B1, D, B2`` in centered pixels, where
            ``A-B1`` and ``B2-D`` point at VP1, ``A-B2`` and ``B1-D`` at VP2.
        top: ``(4, 2)`` corners above ``A, B1, D, B2``.
        vps: ``(3, 3)`` homogeneous VP1, VP2, VP3.
    """

    base: np.ndarray
    top: np.ndarray
    vps: np.ndarray

    @property
    def corners(self) -> np.ndarray:
        return np.vstack([self.base, self.top])

    @property
    def base_center(self) -> np.ndarray:
        """Intersection of the base diagonals."""
        A, B1, D, B2 = (_h(p) for p in self.base)
        return _meet(np.cross(A, D), np.cross(B1, B2))

    def front_edge(self, receding: bool) -> tuple[np.ndarray, np.ndarray]:
        """Base edge across the flow on the vehicle's front side.

        A vehicle moving towards VP1 has its front on the edge nearer VP1.
        """
        A, B1, D, B2 = self.base
        edges = ((A, B2), (B1, D))
        vp1 = self.vps[0]
        if abs(vp1[2]) > 1e-12:
            target = vp1[:2] / vp1[2]
            nearness = [-np.linalg.norm((p + q) / 2 - target) for p, q in edges]
        else:
            # Ideal VP1: order along its direction
            nearness = [float(vp1[:2] @ ((p + q) / 2)) for p, q in edges]
        near = int(np.argmax(nearness))
        return edges[near] if receding else edges[1 - near]

    @property
    def area(self) -> float:
        return float(ConvexHull(self.corners).volume)


def _h(p: np.ndarray) -> np.ndarray:
    return np.array([p[0], p[1], 1.0])


def _meet(l1: np.ndarray, l2: np.ndarray) -> np.ndarray:
    p = np.cross(l1, l2)
    if abs(p[2]) <= 1e-12 * max(1.0, float(np.abs(p[:2]).max())):
        raise DegenerateHull("box edges do not intersect")
    return p[:2] / p[2]


def image_down_direction(p: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """Image direction at ``p`` of a small step against the road normal."""
    n = calib.normal
    d = np.array([p[0] * n[2] - calib.f * n[0], p[1] * n[2] - calib.f * n[1]])
    return d / np.linalg.norm(d)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices of ``(N, 2)`` points.

    Raises:
        DegenerateHull: Fewer than three points or all collinear.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise DegenerateHull(f"hull needs at least 3 points, got {len(pts)}")
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise DegenerateHull(f"collinear hull: {e}") from e
    return pts[hull.vertices]


def _inside(hull: np.ndarray, p: np.ndarray, tol: float = 1e-9) -> bool:
    edges = np.roll(hull, -1, axis=0) - hull
    rel = p[None, :] - hull
    cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
    return bool(np.all(cross >= -tol) or np.all(cross <= tol))


def distance_to_polygon(hull: np.ndarray, p: np.ndarray) -> float:
    """Zero inside the convex polygon, else distance to its boundary."""
    if _inside(hull, p):
        return 0.0
    a = hull
    b = np.roll(hull, -1, axis=0)
    ab = b - a
    t = np.clip(((p - a) * ab).sum(axis=1) / (ab * ab).sum(axis=1), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.linalg.norm(closest - p, axis=1).min())


def tangent_lines(
    hull: np.ndarray, vp: np.ndarray
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """The two hull tangents through a homogeneous VP.

    Returns:
        Two ``(line, contact_point)`` pairs; lines are homogeneous.

    Raises:
        TangentFailure: If the VP lies inside the hull.
    """
    w = vp[2]
    if abs(w) > 1e-12 * max(1.0, float(np.abs(vp[:2]).max())):
        v = vp[:2] / w
        if _inside(hull, v):
            raise TangentFailure(f"vanishing point {v} lies inside the hull")
        ref = hull.mean(axis=0) - v
        g = hull - v
        coord = np.arctan2(
            ref[0] * g[:, 1] - ref[1] * g[:, 0], (ref[None, :] * g).sum(axis=1)
        )
    else:
        normal = np.array([-vp[1], vp[0]])
        coord = hull @ normal
    lo, hi = int(np.argmin(coord)), int(np.argmax(coord))
    if lo == hi:
        raise DegenerateHull("hull collapses to a point along the VP direction")
    return (
        (np.cross(vp, _h(hull[lo])), hull[lo]),
        (np.cross(vp, _h(hull[hi])), hull[hi]),
    )


def box_from_hull(
    hull_points: np.ndarray, vps: np.ndarray, down_dir: np.ndarray
) -> BoundingBox3D:
    """Build the box from hull points, homogeneous VPs ``(3, 3)`` and image down.

    Raises:
        DegenerateHull: Collinear hull or parallel box edges.
        TangentFailure: A VP inside the hull.
    """
    hull = convex_hull(hull_points)
    vp1, vp2, vp3 = (np.asarray(v, dtype=float) for v in vps)

    def split(vp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        (l_a, p_a), (l_b, p_b) = tangent_lines(hull, vp)
        if float(p_a @ down_dir) >= float(p_b @ down_dir):
            return l_a, l_b
        return l_b, l_a

    l1_base, l1_top = split(vp1)
    l2_base, l2_top = split(vp2)
    (l3_x, _), (l3_y, _) = tangent_lines(hull, vp3)

    A = _meet(l1_base, l2_base)
    pairings = []
    for la, lb in ((l3_x, l3_y), (l3_y, l3_x)):
        try:
            B1, B2 = _meet(l1_base, la), _meet(l2_base, lb)
        except DegenerateHull:
            continue
        cost = distance_to_polygon(hull, B1) + distance_to_polygon(hull, B2)
        pairings.append((cost, B1, B2))
    if not pairings:
        raise DegenerateHull("VP3 tangents are parallel to the base edges")
    _, B1, B2 = min(pairings, key=lambda item: item[0])
    D = _meet(np.cross(vp1, _h(B2)), np.cross(vp2, _h(B1)))

    T_B2 = _meet(np.cross(vp3, _h(B2)), l1_top)
    T_B1 = _meet(np.cross(vp3, _h(B1)), l2_top)
    T_D = _meet(l1_top, l2_top)
    T_A = _meet(np.cross(vp1, _h(T_B1)), np.cross(vp2, _h(T_B2)))

    return BoundingBox3D(
        base=np.array([A, B1, D, B2]),
        top=np.array([T_A, T_B1, T_D, T_B2]),
        vps=np.array([vp1, vp2, vp3]),
    )


def construct_3d_bbox(hull: np.ndarray, calib: CameraCalibration) -> BoundingBox3D:
    """Box around a centered-pixel hull using the calibration's three VPs."""
    pts = np.asarray(hull, dtype=float)
    vps = np.array(
        [calib.vp1.homogeneous(), calib.vp2.homogeneous(), third_vp(calib)]
    )
    down = image_down_direction(pts.mean(axis=0), calib)
    return box_from_hull(pts, vps, down)


def reference_point(box: BoundingBox3D, receding: bool = True) -> np.ndarray:
    """Projective midpoint of the bottom-front edge.

    The front edge is cut by the line from the base center to VP1, which is
    where the 3D midpoint of that edge projects.
    """
    p, q = box.front_edge(receding)
    edge = np.cross(_h(p), _h(q))
    through_center = np.cross(_h(box.base_center), box.vps[0])
    return _meet(edge, through_center)
