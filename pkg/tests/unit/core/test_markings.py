import numpy as np
import pytest

from src.core.camera import ImagePoint
from src.core.markings import GroundTruthMarking, MeasuredSegment


class TestMeasuredSegment:
    def test_valid_segment(self):
        seg = MeasuredSegment(ImagePoint(0, 10), ImagePoint(5, 40), 6.0)
        assert seg.meters == 6.0

    @pytest.mark.parametrize("meters", [0.0, -3.0])
    def test_rejects_non_positive_length(self, meters):
        with pytest.raises(ValueError):
            MeasuredSegment(ImagePoint(0, 10), ImagePoint(5, 40), meters)

    def test_rejects_coincident_endpoints(self):
        with pytest.raises(ValueError):
            MeasuredSegment(ImagePoint(1, 1), ImagePoint(1, 1), 3.5)


class TestGroundTruthMarking:
    def test_defaults_are_empty(self):
        marking = GroundTruthMarking()
        assert marking.d1 == [] and marking.d2 == []
        assert marking.measurement_line is None

    def test_rejects_degenerate_lines(self):
        p = ImagePoint(3, 4)
        with pytest.raises(ValueError):
            GroundTruthMarking(lane_lines=[(p, p)])
        with pytest.raises(ValueError):
            GroundTruthMarking(perpendicular_lines=[(p, p)])

    def test_keeps_homogeneous_lines(self):
        line = np.array([0.0, 1.0, -100.0])
        marking = GroundTruthMarking(measurement_line=line, lane_boundaries=[line])
        np.testing.assert_array_equal(marking.measurement_line, line)
        assert len(marking.lane_boundaries) == 1
