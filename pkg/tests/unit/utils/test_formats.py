import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.camera import ImagePoint
from src.core.edgelet import Edgelet
from src.core.errors import SchemaError
from src.core.track import Track
from src.utils import constants as c
from src.utils.formats import (
    MarkingsFile,
    RegressionFile,
    SceneConfig,
    load_calibration,
    load_detections,
    load_edgelets,
    load_models,
    load_regression,
    load_scene,
    load_tracks,
    load_trajectories,
    load_wireframe,
    markings_from_file,
    save_calibration,
    save_detections,
    save_edgelets,
    save_regression,
    save_scene,
    save_tracks,
    save_wireframe,
)
from src.utils.paths import resource_path


def _jsonl(path, *rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


class TestCalibrationFile:
    def test_save_and_load(self, create_calibration, tmp_path):
        calib = create_calibration()
        path = tmp_path / "calibration.json"
        save_calibration(path, calib)
        loaded = load_calibration(path)
        assert loaded.f == pytest.approx(calib.f, rel=1e-12)
        assert loaded.scale == calib.scale
        assert loaded.image_size == (640, 360)
        np.testing.assert_allclose(loaded.normal, calib.normal, atol=1e-12)

    def test_file_uses_pixel_coordinates(self, create_calibration, tmp_path):
        calib = create_calibration()
        path = tmp_path / "calibration.json"
        save_calibration(path, calib)
        data = json.loads(path.read_text())
        assert data["version"] == c.CALIBRATION_VERSION
        assert data["principal_point"] == [320.0, 180.0]
        assert data["vp1"][0] == pytest.approx(calib.vp1.x + 320.0)

    def test_file_matches_shipped_schema(self, create_calibration, tmp_path):
        path = tmp_path / "calibration.json"
        save_calibration(path, create_calibration())
        data = json.loads(path.read_text())
        with open(resource_path("assets/schemas/calibration.schema.json")) as f:
            schema = json.load(f)
        assert set(schema["required"]) <= set(data)
        assert set(data) <= set(schema["properties"])

    def test_wrong_version(self, create_calibration, tmp_path):
        path = tmp_path / "calibration.json"
        save_calibration(path, create_calibration())
        data = json.loads(path.read_text())
        data["version"] = "autocalib-calibration/2"
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError):
            load_calibration(path)

    def test_focal_must_agree_with_vps(self, create_calibration, tmp_path):
        path = tmp_path / "calibration.json"
        save_calibration(path, create_calibration())
        data = json.loads(path.read_text())
        data["focal_px"] *= 1.01
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError):
            load_calibration(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            load_calibration(tmp_path / "absent.json")


class TestSceneConfig:
    def test_save_and_load(self, create_scene, tmp_path):
        scene = create_scene(
            vehicles=[
                {"model_id": "sedan", "speed_kmh": 50, "lane": 0, "entry_time_s": 0}
            ]
        )
        save_scene(tmp_path / "scene.json", scene)
        assert load_scene(tmp_path / "scene.json") == scene

    @pytest.mark.parametrize(
        "override",
        [
            {"image_size": (8, 8)},
            {"duration_s": 0.0},
            {"unexpected": 1},
            {"camera": {"focal_px": 600, "tilt_deg": 95, "pan_deg": 0, "height_m": 6}},
        ],
    )
    def test_invalid_scene(self, create_scene, override):
        with pytest.raises(ValidationError):
            create_scene(**override)

    def test_bad_scene_file(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text('{"version": "autocalib-scene/1"}')
        with pytest.raises(SchemaError):
            load_scene(path)

    def test_shipped_example_scene(self):
        scene = load_scene(resource_path("assets/scenes/example_scene.json"))
        assert isinstance(scene, SceneConfig)
        assert scene.vehicles


class TestJsonLines:
    def test_trajectories_are_centered(self, tmp_path):
        path = _jsonl(
            tmp_path / "trajectories.jsonl",
            {"version": c.TRAJECTORIES_VERSION},
            {"track_id": 4, "frame": 0, "x": 320.0, "y": 180.0},
            {"track_id": 4, "frame": 1, "x": 330.0, "y": 170.0},
        )
        tracklets = load_trajectories(path, (640, 360))
        assert tracklets == {
            4: [(0, ImagePoint(0.0, 0.0)), (1, ImagePoint(10.0, -10.0))]
        }

    @pytest.mark.parametrize(
        "rows",
        [
            [],
            [{"version": "autocalib-detections/9"}],
            [{"no_version": True}],
            [{"version": c.TRAJECTORIES_VERSION}, {"track_id": "x"}],
        ],
    )
    def test_bad_files(self, tmp_path, rows):
        path = _jsonl(tmp_path / "t.jsonl", *rows)
        with pytest.raises(SchemaError):
            load_trajectories(path, (640, 360))

    def test_detections_grouped_by_frame(self, tmp_path, create_detection):
        dets = [create_detection(0), create_detection(0, x=300.0), create_detection(2)]
        path = tmp_path / "detections.jsonl"
        save_detections(path, dets)
        by_frame = load_detections(path)
        assert sorted(by_frame) == [0, 2]
        assert by_frame[0] == dets[:2]
        assert '"class"' in path.read_text()

    def test_detection_times_must_increase(self, tmp_path):
        path = _jsonl(
            tmp_path / "detections.jsonl",
            {"version": c.DETECTIONS_VERSION},
            {"frame": 0, "t": 0.5, "bbox": [0, 0, 10, 10]},
            {"frame": 1, "t": 0.4, "bbox": [0, 0, 10, 10]},
        )
        with pytest.raises(SchemaError):
            load_detections(path)

    def test_hull_outside_bbox_is_rejected(self, tmp_path):
        path = _jsonl(
            tmp_path / "detections.jsonl",
            {"version": c.DETECTIONS_VERSION},
            {
                "frame": 0,
                "t": 0.0,
                "bbox": [0, 0, 10, 10],
                "hull": [[0, 0], [50, 0], [0, 5]],
            },
        )
        with pytest.raises(SchemaError):
            load_detections(path)

    def test_tracks_keep_reference_points(self, tmp_path, create_detection):
        track = Track(
            3,
            detections=[create_detection(0, label="combi")],
            reference_points=[(0.0, ImagePoint(-20.0, 15.0))],
        )
        path = tmp_path / "tracks.jsonl"
        save_tracks(path, [track], (640, 360))
        (loaded,) = load_tracks(path)
        assert loaded.track_id == 3
        assert loaded.label == "combi"
        assert loaded.reference_points == [(0.0, ImagePoint(-20.0, 15.0))]

    def test_edgelets_carry_the_image_size(self, tmp_path):
        edgelets = [Edgelet(ImagePoint(-5.0, 7.0), (0.6, 0.8), 12.5)]
        path = tmp_path / "edgelets.jsonl"
        save_edgelets(path, edgelets, (320, 240))
        loaded, size = load_edgelets(path)
        assert size == (320, 240)
        assert loaded[0].seed == ImagePoint(-5.0, 7.0)
        assert loaded[0].direction == (0.6, 0.8)


class TestModelsAndMarkings:
    def test_shipped_models(self):
        models = load_models(["combi", "sedan"])
        assert set(models) == {"combi", "sedan"}
        assert models["sedan"].length_m > 4.0

    def test_wireframe_round_trip_and_validation(self, tmp_path):
        model = load_models(["combi"])["combi"]
        path = tmp_path / "combi.json"
        save_wireframe(path, model)
        assert load_wireframe(path).edges == model.edges
        data = json.loads(path.read_text())
        data["anchor_front"] = len(data["vertices"])
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError):
            load_wireframe(path)

    def test_regression_file(self, tmp_path):
        save_regression(tmp_path / "reg.json", RegressionFile(alpha=1.2, beta=-0.1))
        loaded = load_regression(tmp_path / "reg.json")
        assert (loaded.alpha, loaded.beta, loaded.pairs) == (1.2, -0.1, [])

    def test_markings_become_centered_lines(self):
        data = MarkingsFile(
            image_size=(640, 360),
            lane_lines=[((320.0, 180.0), (320.0, 0.0))],
            d1=[{"p1": (320.0, 300.0), "p2": (320.0, 250.0), "meters": 6.0}],
            measurement_line=((0.0, 200.0), (640.0, 200.0)),
        )
        markings = markings_from_file(data)
        assert markings.lane_lines[0][0] == ImagePoint(0.0, 0.0)
        assert markings.d1[0].p1 == ImagePoint(0.0, 120.0)
        line = markings.measurement_line
        assert line @ np.array([100.0, 20.0, 1.0]) == pytest.approx(0.0)

    def test_degenerate_marking_is_a_schema_error(self):
        data = MarkingsFile(
            image_size=(640, 360),
            d1=[{"p1": (10.0, 10.0), "p2": (10.0, 10.0), "meters": 6.0}],
            measurement_line=((0.0, 200.0), (640.0, 200.0)),
        )
        with pytest.raises(SchemaError):
            markings_from_file(data)
