import math

import numpy as np
import pytest

from src.core.camera import ImagePoint
from src.managers.pipeline_manager import Bundle
from src.utils import constants as c
from src.utils.constants import CalibrationSource, ScaleSource
from src.utils.formats import calibration_from_file, load_calibration

pytestmark = pytest.mark.slow

SEEDS = range(10)
ALL_SCALES = [
    ScaleSource.BBOX,
    ScaleSource.BBOX_REG,
    ScaleSource.SPEED,
    ScaleSource.MANUAL,
]


def _ray_error_px(estimated: ImagePoint, truth: ImagePoint, f: float) -> float:
    """Angle between the viewing rays of two image points, as pixels at ``f``."""
    a = np.array([estimated.x, estimated.y, f])
    b = np.array([truth.x, truth.y, f])
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return f * math.tan(math.acos(min(1.0, cos)))


def _pooled_mean(blocks, relative=True):
    """Mean error over every vehicle of several speed-error blocks."""
    total = sum(b.count for b in blocks)
    return sum((b.rel if relative else b.abs).mean * b.count for b in blocks) / total


def _scale_error(scale, bundle):
    return (scale - bundle.scene.camera.height_m) / bundle.scene.camera.height_m


@pytest.fixture(scope="module")
def noisy_regression(accuracy_pipeline, create_random_scene, simulate_bundle):
    bundles = [
        simulate_bundle(create_random_scene(seed, noisy=True), seed)
        for seed in range(100, 105)
    ]
    return accuracy_pipeline.fit_regression(bundles, CalibrationSource.AUTO)


@pytest.fixture(scope="module")
def automatic_run(accuracy_pipeline, create_random_scene, request, tmp_path_factory):
    """Factory for automatic calibration runs, cached per seed and noise."""
    cache = {}

    def _run(seed, noisy=False):
        if (seed, noisy) not in cache:
            out = tmp_path_factory.mktemp("auto")
            scene = create_random_scene(seed, noisy=noisy)
            scales, regression = [ScaleSource.BBOX], None
            if noisy:
                scales = ALL_SCALES
                regression = request.getfixturevalue("noisy_regression")
            report = accuracy_pipeline.run(
                scene,
                seed,
                out,
                [CalibrationSource.AUTO],
                scales,
                regression=regression,
            )
            bundle = Bundle.open(out / "bundle")
            estimated = load_calibration(out / "auto_bbox" / c.CALIBRATION_FILE)
            truth = calibration_from_file(bundle.truth().calibration)
            cache[seed, noisy] = (report, estimated, truth)
        return cache[seed, noisy]

    return _run


class TestAutomaticCalibration:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_recovers_the_camera(self, automatic_run, seed):
        _, estimated, truth = automatic_run(seed)
        vp1_error = math.hypot(
            estimated.vp1.x - truth.vp1.x, estimated.vp1.y - truth.vp1.y
        )
        assert vp1_error < 3.0
        assert _ray_error_px(estimated.vp2, truth.vp2, truth.f) < 5.0
        assert estimated.f == pytest.approx(truth.f, rel=0.02)
        assert estimated.scale == pytest.approx(truth.scale, rel=0.03)


class TestSpeedAccuracy:
    def test_noise_free_speeds_within_one_percent(self, automatic_run):
        blocks = [automatic_run(s)[0].systems["auto_bbox"].speed_error for s in SEEDS]
        assert _pooled_mean(blocks) < 1.0

    def test_noisy_speeds_within_three_percent(self, automatic_run):
        blocks = [
            automatic_run(s, noisy=True)[0].systems["auto_bbox"].speed_error
            for s in SEEDS
        ]
        assert _pooled_mean(blocks) < 3.0

    def test_speed_scale_is_the_most_accurate(self, automatic_run):
        reports = [automatic_run(s, noisy=True)[0] for s in SEEDS]

        def pooled(name):
            return _pooled_mean(
                [r.systems[name].speed_error for r in reports], relative=False
            )

        assert pooled("auto_speed") <= pooled("auto_bbox+reg")
        assert pooled("auto_speed") <= pooled("auto_manual")


class TestScaleCorrection:
    @pytest.mark.parametrize("factor", [1.05, 0.95])
    def test_regression_corrects_mis_sized_models(
        self, accuracy_pipeline, create_random_scene, simulate_bundle, factor
    ):
        lengths = {"combi": factor, "sedan": factor}
        bundles = [
            simulate_bundle(create_random_scene(seed, length_factors=lengths), seed)
            for seed in range(200, 210)
        ]
        train, held_out = bundles[:5], bundles[5:]
        regression = accuracy_pipeline.fit_regression(train)

        plain, corrected = [], []
        for bundle in held_out:
            for source, errors in (
                (ScaleSource.BBOX, plain),
                (ScaleSource.BBOX_REG, corrected),
            ):
                system = accuracy_pipeline.run_system(
                    bundle, CalibrationSource.ORACLE, source, regression=regression
                )
                errors.append(abs(_scale_error(system.calibration.scale, bundle)))
        assert np.mean(corrected) < np.mean(plain)

    @pytest.mark.parametrize("seed", range(300, 303))
    def test_combined_models_cancel_opposite_errors(
        self, accuracy_pipeline, create_random_scene, simulate_bundle, seed
    ):
        lengths = {"combi": 1.05, "sedan": 0.95}
        bundle = simulate_bundle(
            create_random_scene(seed, length_factors=lengths), seed
        )
        models = accuracy_pipeline.models
        errors = {}
        for subset in (["combi"], ["sedan"], ["combi", "sedan"]):
            system = accuracy_pipeline.run_system(
                bundle,
                CalibrationSource.ORACLE,
                ScaleSource.BBOX,
                models={k: models[k] for k in subset},
            )
            errors["+".join(subset)] = _scale_error(system.calibration.scale, bundle)

        assert errors["combi"] * errors["sedan"] < 0
        worst = max(abs(errors["combi"]), abs(errors["sedan"]))
        assert abs(errors["combi+sedan"]) < worst
