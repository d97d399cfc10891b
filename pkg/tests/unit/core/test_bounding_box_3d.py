import numpy as np
import pytest
from scipy.spatial import ConvexHull

from src.core.bounding_box_3d import (
    BoundingBox3D,
    box_from_hull,
    construct_3d_bbox,
    convex_hull,
    distance_to_polygon,
    image_down_direction,
    reference_point,
    tangent_lines,
)
from src.core.camera import ImagePoint, ground_distance
from src.core.errors import DegenerateHull, TangentFailure
from src.managers.settings_manager import SettingsManager
from src.managers.simulation_manager import SimCamera, SimulationManager

LENGTH, WIDTH, HEIGHT = 4.5, 1.8, 1.5


def _cuboid(center_x, center_y):
    """World corners: base A, B1, D, B2 as the camera sees them, then the top."""
    rear, front = center_x - LENGTH / 2, center_x + LENGTH / 2
    near, far = center_y + WIDTH / 2, center_y - WIDTH / 2
    base = [(rear, near), (front, near), (front, far), (rear, far)]
    corners = [(x, y, 0.0) for x, y in base] + [(x, y, HEIGHT) for x, y in base]
    return np.array(corners)


def _centered(cam, world):
    px = cam.project(world)
    w, h = cam.image_size
    return px - np.array([w / 2.0, h / 2.0])


@pytest.fixture
def scene_camera(create_scene):
    scene = create_scene()
    calib = SimulationManager(SettingsManager()).ground_truth_calibration(scene)
    return SimCamera.from_config(scene), calib


def _same_rows(actual, expected, atol=1e-6):
    for row in expected:
        assert np.min(np.linalg.norm(actual - row, axis=1)) < atol


class TestHullHelpers:
    def test_hull_is_counter_clockwise_subset(self):
        pts = np.array([[0, 0], [4, 0], [4, 4], [0, 4], [2, 2]], dtype=float)
        hull = convex_hull(pts)
        assert len(hull) == 4
        signed = np.sum(
            hull[:, 0] * np.roll(hull[:, 1], -1) - np.roll(hull[:, 0], -1) * hull[:, 1]
        )
        assert signed > 0

    def test_too_few_or_collinear_points(self):
        with pytest.raises(DegenerateHull):
            convex_hull(np.array([[0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(DegenerateHull):
            convex_hull(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))

    def test_distance_to_polygon(self):
        square = convex_hull(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
        assert distance_to_polygon(square, np.array([0.5, 0.5])) == 0.0
        assert distance_to_polygon(square, np.array([2.0, 0.5])) == pytest.approx(1.0)
        assert distance_to_polygon(square, np.array([4.0, 5.0])) == pytest.approx(5.0)

    def test_tangents_from_outside_point(self):
        square = convex_hull(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
        (l_a, p_a), (l_b, p_b) = tangent_lines(square, np.array([3.0, 0.5, 1.0]))
        contacts = {tuple(p_a), tuple(p_b)}
        assert contacts == {(1.0, 0.0), (1.0, 1.0)}
        for line, p in ((l_a, p_a), (l_b, p_b)):
            assert line @ np.array([p[0], p[1], 1.0]) == pytest.approx(0.0)

    def test_tangents_from_ideal_point(self):
        square = convex_hull(np.array([[0, 0], [2, 0], [2, 1], [0, 1]], dtype=float))
        (_, p_a), (_, p_b) = tangent_lines(square, np.array([1.0, 0.0, 0.0]))
        assert {p_a[1], p_b[1]} == {0.0, 1.0}

    def test_vp_inside_hull_fails(self):
        square = convex_hull(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
        with pytest.raises(TangentFailure):
            tangent_lines(square, np.array([0.5, 0.5, 1.0]))


class TestConstruct3DBox:
    def test_recovers_projected_cuboid(self, scene_camera):
        cam, calib = scene_camera
        world = _cuboid(25.0, -1.75)
        corners = _centered(cam, world)
        box = construct_3d_bbox(convex_hull(corners), calib)
        _same_rows(box.base, corners[:4])
        _same_rows(box.top, corners[4:])
        np.testing.assert_allclose(box.base[0], corners[0], atol=1e-6)
        assert isinstance(box, BoundingBox3D)
        assert box.area > 0
        assert box.corners.shape == (8, 2)

    def test_reference_point_is_front_edge_midpoint(self, scene_camera):
        cam, calib = scene_camera
        world = _cuboid(25.0, -1.75)
        box = construct_3d_bbox(_centered(cam, world), calib)
        front = _centered(cam, np.array([[25.0 + LENGTH / 2, -1.75, 0.0]]))[0]
        rear = _centered(cam, np.array([[25.0 - LENGTH / 2, -1.75, 0.0]]))[0]
        ahead = reference_point(box, receding=True)
        behind = reference_point(box, receding=False)
        np.testing.assert_allclose(ahead, front, atol=1e-6)
        np.testing.assert_allclose(behind, rear, atol=1e-6)

    def test_base_center_projects_to_footprint_center(self, scene_camera):
        cam, calib = scene_camera
        box = construct_3d_bbox(_centered(cam, _cuboid(30.0, -5.25)), calib)
        center = _centered(cam, np.array([[30.0, -5.25, 0.0]]))[0]
        np.testing.assert_allclose(box.base_center, center, atol=1e-6)

    def test_reference_points_measure_metric_displacement(self, scene_camera):
        cam, calib = scene_camera
        refs = []
        for x in (22.0, 28.0):
            box = construct_3d_bbox(_centered(cam, _cuboid(x, -1.75)), calib)
            refs.append(ImagePoint(*reference_point(box)))
        assert ground_distance(refs[0], refs[1], calib) == pytest.approx(6.0, rel=1e-6)

    def test_down_direction_points_down_the_image(self, scene_camera):
        _, calib = scene_camera
        d = image_down_direction(np.array([0.0, 50.0]), calib)
        assert np.linalg.norm(d) == pytest.approx(1.0)
        assert d[1] > 0.9

    def test_collinear_hull_is_rejected(self, scene_camera):
        _, calib = scene_camera
        vps = np.array([calib.vp1.homogeneous(), calib.vp2.homogeneous(), [0, 1, 0]])
        with pytest.raises(DegenerateHull):
            box_from_hull(
                np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
                vps,
                np.array([0.0, 1.0]),
            )

    @pytest.mark.parametrize("seed", range(100))
    def test_box_encloses_the_hull(self, scene_camera, seed):
        cam, calib = scene_camera
        rng = np.random.default_rng(seed)
        size = rng.uniform([3.0, 1.5, 1.2], [6.0, 2.2, 2.5])
        origin = np.array([rng.uniform(18.0, 40.0), rng.uniform(-6.0, -1.0), 0.0])
        world = origin + rng.uniform(0.0, 1.0, (20, 3)) * size
        hull = convex_hull(_centered(cam, world))
        box = construct_3d_bbox(hull, calib)

        lo, hi = box.corners.min(axis=0), box.corners.max(axis=0)
        assert np.all(hull >= lo - 1e-6)
        assert np.all(hull <= hi + 1e-6)
        assert box.area >= ConvexHull(hull).volume - 1e-6
