import math

import numpy as np
import pytest

from src.core.wireframe import default_models
from src.managers.pipeline_manager import Bundle, PipelineManager
from src.managers.settings_manager import SettingsManager
from src.utils.formats import SceneConfig, load_models, load_scene
from src.utils.paths import resource_path

WIDTH, HEIGHT = 960, 540
LANE_WIDTH_M = 3.5


@pytest.fixture(scope="session")
def example_scene():
    """The shipped two-lane highway scene at 960x540."""
    return load_scene(resource_path("assets/scenes/example_scene.json"))


@pytest.fixture(scope="session")
def pipeline():
    settings = SettingsManager()
    settings.threads = 2
    return PipelineManager(settings, models=load_models(["combi", "sedan"]))


@pytest.fixture(scope="session")
def example_run(pipeline, example_scene, tmp_path_factory):
    """Factory for closed-loop runs on the example scene, cached per source pair."""
    cache = {}

    def _run(calib_sources, scale_sources, **kwargs):
        key = (tuple(calib_sources), tuple(scale_sources))
        if key not in cache:
            out = tmp_path_factory.mktemp("run")
            report = pipeline.run(
                example_scene, 0, out, calib_sources, scale_sources, **kwargs
            )
            cache[key] = (report, out)
        return cache[key]

    return _run


@pytest.fixture(scope="session")
def create_random_scene():
    """Factory for seeded highway scenes over a range of camera placements.

    Tilt is drawn from 10-40 degrees, pan from 15-30 degrees to either side
    and focal length from 0.7-2.0 image widths. The camera height puts the
    image center on the middle of the road at a distance where a car spans
    about a seventh of the image width; the true scale equals that height.
    """

    def _create(seed, noisy=False, length_factors=None, vehicles=10):
        """``length_factors`` maps model ids to true-over-model length ratios."""
        rng = np.random.default_rng(seed)
        tilt = rng.uniform(10.0, 40.0)
        pan = rng.choice([-1.0, 1.0]) * rng.uniform(15.0, 30.0)
        focal = rng.uniform(0.7, 2.0) * WIDTH
        distance = 35.0 * focal / WIDTH
        t, p = math.radians(tilt), math.radians(pan)
        along = distance * math.cos(t)
        center_x = along * math.cos(p)
        lateral = -LANE_WIDTH_M - along * math.sin(p)

        factors = length_factors or {}
        models = default_models()
        # Slower vehicles enter later so nothing overtakes
        speeds = np.sort(rng.uniform(50.0, 130.0, vehicles))[::-1]
        specs = []
        for k in range(vehicles):
            model_id = ("combi", "sedan")[k % 2]
            spec = {
                "model_id": model_id,
                "speed_kmh": float(speeds[k]),
                "lane": k % 2,
                "entry_time_s": 1.2 * k,
            }
            if model_id in factors:
                spec["length_m"] = models[model_id].length_m * factors[model_id]
            specs.append(spec)

        road_start, road_end = max(2.0, 0.4 * center_x), 3.0 * center_x
        slowest = min(s["speed_kmh"] for s in specs) / 3.6
        noise = {}
        if noisy:
            noise = {
                "trajectory_sigma_px": 0.5,
                "edge_outlier_fraction": 0.2,
                "bbox_jitter_px": 2.0,
            }
        return SceneConfig(
            camera={
                "focal_px": focal,
                "tilt_deg": tilt,
                "pan_deg": pan,
                "height_m": distance * math.sin(t),
                "lateral_offset_m": lateral,
            },
            image_size=(WIDTH, HEIGHT),
            lanes={"count": 2, "width_m": LANE_WIDTH_M},
            vehicles=specs,
            noise=noise,
            duration_s=1.2 * vehicles + (road_end - road_start) / slowest,
            road_start_m=road_start,
            road_end_m=road_end,
            measurement_line_m=center_x,
            render_frames=40,
        )

    return _create


@pytest.fixture(scope="session")
def accuracy_pipeline():
    """Pipeline with a finer accumulator for the accuracy runs."""
    settings = SettingsManager()
    settings.threads = 2
    settings.set("diamond_resolution", 801)
    return PipelineManager(settings, models=load_models(["combi", "sedan"]))


@pytest.fixture(scope="session")
def simulate_bundle(accuracy_pipeline, tmp_path_factory):
    """Factory that writes a scene bundle and opens it."""

    def _simulate(scene, seed):
        out = tmp_path_factory.mktemp("bundle")
        accuracy_pipeline.simulate(scene, seed, out)
        return Bundle.open(out)

    return _simulate
