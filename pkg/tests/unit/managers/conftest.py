import numpy as np
import pytest

from src.core.bbox import BBox
from src.core.camera import ImagePoint
from src.core.markings import GroundTruthMarking, MeasuredSegment
from src.core.track import Detection, Track
from src.managers.simulation_manager import SimCamera


@pytest.fixture
def moving_detections():
    """Factory fixture for one box sliding at constant pixel velocity.

    Returns ``{frame: [Detection]}`` for ``frames``; boxes are 40x30 and
    start at ``start``.
    """

    def _create(frames, start=(100.0, 100.0), velocity=(4.0, 1.0), fps=25.0, **kw):
        out = {}
        for k in frames:
            x = start[0] + velocity[0] * k
            y = start[1] + velocity[1] * k
            out[k] = [Detection(frame=k, t=k / fps, bbox=BBox(x, y, 40.0, 30.0), **kw)]
        return out

    return _create


@pytest.fixture
def create_track(create_detection):
    """Factory fixture for a track with one detection per listed frame."""

    def _create(track_id=0, frames=range(10), lane=None, crossing_time=None, **kw):
        return Track(
            track_id=track_id,
            detections=[create_detection(k, **kw) for k in frames],
            lane=lane,
            crossing_time=crossing_time,
        )

    return _create


@pytest.fixture
def create_markings(create_scene):
    """Factory fixture for the marked lines and dashes of a two-lane road.

    Points are centered pixels of the default test scene, optionally with
    Gaussian noise; anything outside the image is dropped.
    """

    def _create(noise=0.0, seed=0, lane_width=3.5, dash=3.0):
        scene = create_scene()
        cam = SimCamera.from_config(scene)
        rng = np.random.default_rng(seed)
        half = np.array(scene.image_size, dtype=float) / 2.0

        def px(X, Y):
            p = cam.project(np.array([X, Y, 0.0]))
            if not cam.inside(p)[0]:
                return None
            q = p[0] - half + rng.normal(0.0, noise, 2)
            return ImagePoint(float(q[0]), float(q[1]))

        boundaries = [0.0, -lane_width, -2 * lane_width]
        stations = [14.0, 20.0, 26.0, 34.0]
        lanes = [(px(16.0, Y), px(40.0, Y)) for Y in boundaries]
        across = [(px(X, 0.0), px(X, boundaries[-1])) for X in stations]
        d1 = [(px(X, Y), px(X + dash, Y), dash) for Y in boundaries for X in stations]
        d2 = [(px(X, 0.0), px(X, -lane_width), lane_width) for X in stations]

        def complete(items):
            return [it for it in items if it[0] is not None and it[1] is not None]

        return GroundTruthMarking(
            lane_lines=complete(lanes),
            perpendicular_lines=complete(across),
            d1=[MeasuredSegment(a, b, m) for a, b, m in complete(d1)],
            d2=[MeasuredSegment(a, b, m) for a, b, m in complete(d2)],
        )

    return _create
