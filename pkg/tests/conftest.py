import os

import pygame
import pytest

from src.core.bbox import BBox
from src.core.track import Detection
from src.managers.settings_manager import SettingsManager
from src.managers.simulation_manager import SimulationManager
from src.utils.formats import SceneConfig

# Frames are rendered offscreen; no window or audio device is ever opened.
os.environ.setdefault("SDL_VIDEODRIVER", "dummy")
os.environ.setdefault("SDL_AUDIODRIVER", "dummy")


@pytest.fixture(scope="session", autouse=True)
def pygame_init():
    """Initialize pygame once per test session."""
    pygame.init()
    yield
    pygame.quit()


@pytest.fixture
def settings():
    """Default tunables, single-threaded so runs are easy to reason about."""
    sm = SettingsManager()
    sm.threads = 1
    return sm


@pytest.fixture
def create_scene():
    """Factory fixture for small scene configs with sensible defaults.

    Keyword arguments ``focal_px``, ``tilt_deg``, ``pan_deg``, ``roll_deg``,
    ``height_m`` and ``lateral_offset_m`` go to the camera; everything else
    to the scene itself.
    """
    camera_keys = {
        "focal_px",
        "tilt_deg",
        "pan_deg",
        "roll_deg",
        "height_m",
        "lateral_offset_m",
    }

    def _create(**kwargs):
        camera = dict(focal_px=600.0, tilt_deg=15.0, pan_deg=-20.0, height_m=6.0)
        camera.update({k: kwargs.pop(k) for k in list(kwargs) if k in camera_keys})
        defaults = dict(
            camera=camera,
            image_size=(640, 360),
            lanes={"count": 2, "width_m": 3.5},
            vehicles=[],
            duration_s=4.0,
            road_start_m=10.0,
            road_end_m=60.0,
            measurement_line_m=20.0,
            render_frames=0,
        )
        defaults.update(kwargs)
        return SceneConfig.model_validate(defaults)

    return _create


@pytest.fixture
def create_calibration(create_scene):
    """Factory fixture for exact calibrations of a simulated camera."""

    def _create(with_scale=True, **kwargs):
        scene = create_scene(**kwargs)
        calib = SimulationManager(SettingsManager()).ground_truth_calibration(scene)
        return calib if with_scale else calib.with_scale(None)

    return _create


@pytest.fixture
def create_detection():
    """Factory fixture for detections at 25 fps with top-left pixel boxes."""

    def _create(frame=0, x=100.0, y=100.0, w=40.0, h=30.0, fps=25.0, **kwargs):
        return Detection(
            frame=frame, t=frame / fps, bbox=BBox(x, y, w, h), **kwargs
        )

    return _create
