import math

import numpy as np
import pytest

from src.core.camera import (
    CameraCalibration,
    GroundPoint,
    ImagePoint,
    RoadPlane,
    calibration_from_vps,
    focal_from_vps,
    ground_distance,
    horizon_line,
    project_to_image,
    project_to_road,
    project_to_road_many,
    rotation_from_vps,
    third_vp,
    viewpoint_vector,
)
from src.core.errors import (
    BehindCamera,
    DegenerateVPs,
    HorizonPoint,
    MissingScale,
    NonPositiveRadicand,
)
from src.managers.settings_manager import SettingsManager
from src.managers.simulation_manager import SimCamera, SimulationManager


def _road_pixel(cam, X, Y):
    px, py = cam.project(np.array([X, Y, 0.0]))[0]
    return ImagePoint.from_pixel(px, py, cam.image_size)


class TestImagePoint:
    def test_pixel_round_trip(self):
        p = ImagePoint.from_pixel(10.0, 300.0, (640, 360))
        assert (p.x, p.y) == (-310.0, 120.0)
        assert p.to_pixel((640, 360)) == (10.0, 300.0)

    def test_lift_appends_focal(self):
        np.testing.assert_array_equal(ImagePoint(3.0, -4.0).lift(500.0), [3, -4, 500])


class TestFocalFromVps:
    def test_focal_is_sqrt_of_negated_dot(self):
        u, v = ImagePoint(300.0, -200.0), ImagePoint(-1000.0, -100.0)
        assert focal_from_vps(u, v) == pytest.approx(math.sqrt(280000.0))

    def test_same_side_points_have_no_focal(self):
        with pytest.raises(NonPositiveRadicand):
            focal_from_vps(ImagePoint(100.0, 0.0), ImagePoint(200.0, 0.0))

    def test_perpendicular_directions_give_zero_radicand(self):
        with pytest.raises(NonPositiveRadicand):
            focal_from_vps(ImagePoint(100.0, 0.0), ImagePoint(0.0, 100.0))


class TestCalibrationFromVps:
    def test_coincident_points_are_degenerate(self):
        p = ImagePoint(100.0, -50.0)
        with pytest.raises(DegenerateVPs):
            calibration_from_vps(p, p)

    def test_recovers_simulated_focal(self, create_calibration):
        calib = create_calibration(focal_px=800.0)
        assert calib.f == pytest.approx(800.0, rel=1e-9)

    def test_normal_is_unit_and_points_up_the_image(self, create_calibration):
        calib = create_calibration()
        assert np.linalg.norm(calib.normal) == pytest.approx(1.0)
        assert calib.normal[1] < 0

    def test_normal_is_orthogonal_to_both_lifted_vps(self, create_calibration):
        calib = create_calibration()
        assert calib.normal @ calib.lift(calib.vp1) == pytest.approx(0.0, abs=1e-6)
        assert calib.normal @ calib.lift(calib.vp2) == pytest.approx(0.0, abs=1e-6)

    def test_scale_is_optional(self, create_calibration):
        calib = create_calibration(with_scale=False)
        assert calib.scale is None
        with pytest.raises(MissingScale):
            calib.require_scale()

    def test_with_scale_rejects_non_positive(self, create_calibration):
        calib = create_calibration()
        with pytest.raises(ValueError):
            calib.with_scale(0.0)
        assert calib.with_scale(2.5).scale == 2.5


class TestProjectToRoad:
    def test_projection_lies_on_plane(self, create_calibration):
        calib = create_calibration()
        P = project_to_road(ImagePoint(10.0, 120.0), calib)
        assert calib.plane.contains(P)

    def test_vanishing_point_is_on_horizon(self, create_calibration):
        calib = create_calibration()
        with pytest.raises(HorizonPoint):
            project_to_road(calib.vp1, calib)

    def test_point_above_horizon_raises(self, create_calibration):
        calib = create_calibration(tilt_deg=15.0, focal_px=600.0)
        horizon_y = -600.0 * math.tan(math.radians(15.0))
        with pytest.raises(HorizonPoint):
            project_to_road(ImagePoint(0.0, horizon_y - 100.0), calib)

    def test_vectorized_matches_scalar(self, create_calibration):
        calib = create_calibration()
        xy = np.array([[0.0, 100.0], [-200.0, 150.0], [250.0, 20.0]])
        many = project_to_road_many(xy, calib)
        for row, (x, y) in zip(many, xy):
            scalar = project_to_road(ImagePoint(x, y), calib).as_array()
            np.testing.assert_allclose(row, scalar)

    def test_vectorized_lenient_mode_returns_nan(self, create_calibration):
        calib = create_calibration()
        xy = np.array([[0.0, 100.0], [0.0, -1000.0]])
        with pytest.raises(HorizonPoint):
            project_to_road_many(xy, calib)
        out = project_to_road_many(xy, calib, strict=False)
        assert np.isfinite(out[0]).all()
        assert np.isnan(out[1]).all()


class TestGroundDistance:
    def test_recovers_metric_distance(self, create_scene):
        scene = create_scene()
        cam = SimCamera.from_config(scene)
        calib = SimulationManager(SettingsManager()).ground_truth_calibration(scene)
        p1, p2 = _road_pixel(cam, 20.0, -1.0), _road_pixel(cam, 26.0, -4.5)
        expected = math.hypot(6.0, 3.5)
        assert ground_distance(p1, p2, calib) == pytest.approx(expected, rel=1e-9)

    def test_requires_scale(self, create_calibration):
        calib = create_calibration(with_scale=False)
        with pytest.raises(MissingScale):
            ground_distance(ImagePoint(0, 100), ImagePoint(0, 150), calib)

    @pytest.mark.parametrize("seed", range(100))
    def test_random_cameras_preserve_distances(self, create_scene, seed):
        rng = np.random.default_rng(seed)
        pan = rng.uniform(5.0, 40.0) * rng.choice([-1.0, 1.0])
        scene = create_scene(
            focal_px=rng.uniform(400.0, 2000.0),
            tilt_deg=rng.uniform(5.0, 40.0),
            pan_deg=pan,
            roll_deg=rng.uniform(-5.0, 5.0),
            height_m=rng.uniform(3.0, 15.0),
        )
        cam = SimCamera.from_config(scene)
        calib = SimulationManager(SettingsManager()).ground_truth_calibration(scene)
        a = np.array([rng.uniform(15.0, 40.0), rng.uniform(-7.0, 0.0)])
        b = a + rng.uniform(-5.0, 5.0, 2)
        measured = ground_distance(
            _road_pixel(cam, *a), _road_pixel(cam, *b), calib
        )
        assert measured == pytest.approx(float(np.linalg.norm(a - b)), rel=1e-6)


class TestDerivedGeometry:
    def test_rotation_is_proper(self, create_calibration):
        R = rotation_from_vps(create_calibration())
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)

    def test_third_vp_matches_vertical_direction(self, create_scene):
        scene = create_scene(roll_deg=2.0)
        cam = SimCamera.from_config(scene)
        calib = SimulationManager(SettingsManager()).ground_truth_calibration(scene)
        vp3 = third_vp(calib)
        up = cam.vanishing_point(np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(vp3[:2] / vp3[2], [up.x, up.y], rtol=1e-6)

    def test_horizon_passes_through_both_vps(self, create_calibration):
        calib = create_calibration()
        line = horizon_line(calib)
        assert line @ calib.vp1.homogeneous() == pytest.approx(0.0, abs=1e-6)
        assert line @ calib.vp2.homogeneous() == pytest.approx(0.0, abs=1e-6)

    def test_viewpoint_vector_is_unit(self, create_calibration):
        phi = viewpoint_vector(ImagePoint(20.0, 100.0), create_calibration())
        assert np.linalg.norm(phi) == pytest.approx(1.0)


class TestProjectToImage:
    def test_pinhole_projection(self):
        out = project_to_image(np.array([[1.0, -2.0, 4.0]]), 800.0)
        np.testing.assert_allclose(out, [[200.0, -400.0]])

    def test_points_behind_camera_raise(self):
        with pytest.raises(BehindCamera):
            project_to_image(np.array([[0.0, 0.0, -1.0]]), 800.0)


class TestRoadPlane:
    def test_contains_uses_relative_tolerance(self):
        plane = RoadPlane(n=(0.0, -1.0, 0.0))
        assert plane.contains(GroundPoint(5.0, 1.0, 100.0))
        assert not plane.contains(GroundPoint(5.0, 1.1, 100.0))

    def test_calibration_is_frozen(self, create_calibration):
        calib = create_calibration()
        assert isinstance(calib, CameraCalibration)
        with pytest.raises(AttributeError):
            calib.f = 1.0  # type: ignore[misc]
