import csv
import dataclasses

import numpy as np
import pytest

from src.core.errors import EmptyMarkings, EmptyMatches, MissingScale
from src.managers.evaluation_manager import (
    HISTOGRAM_HEADER,
    ErrorSummary,
    counting_block,
    cumulative_histogram,
    distance_error,
    nearest_rank,
    ratio_error,
    save_histogram,
    speed_error,
)
from src.managers.speed_manager import SpeedMeasurement
from src.managers.track_manager import CountingResult
from src.utils.constants import DistanceFilter
from src.utils.formats import VehiclePass


@pytest.fixture
def create_measurement():
    def _create(track_id, speed_kmh):
        return SpeedMeasurement(
            track_id=track_id,
            speed_kmh=speed_kmh,
            sample_count=10,
            tau=5,
            pair_speeds=(speed_kmh,),
            first_t=0.0,
            last_t=1.0,
        )

    return _create


@pytest.fixture
def create_pass():
    def _create(vehicle_id, speed_kmh, lane=0, t=1.0):
        return VehiclePass(
            vehicle_id=vehicle_id,
            lane=lane,
            crossing_time_s=t,
            speed_kmh=speed_kmh,
            model_id="sedan",
        )

    return _create


class TestNearestRank:
    @pytest.mark.parametrize(
        "values, q, expected",
        [
            ([1.0, 2.0, 3.0, 4.0, 5.0], 0.5, 3.0),
            (list(range(1, 11)), 0.99, 10.0),
            ([7.0], 0.99, 7.0),
            ([1.0, 2.0], 0.0, 1.0),
        ],
    )
    def test_element_ceil_qn_minus_one(self, values, q, expected):
        assert nearest_rank(np.array(values), q) == expected


class TestErrorSummary:
    def test_absolute_and_relative(self):
        summary = ErrorSummary.from_errors([9.0, 22.0, 28.0], [10.0, 20.0, 30.0])
        assert summary.mean == pytest.approx(5.0 / 3.0)
        assert summary.median == 2.0
        assert summary.p99 == 2.0
        assert summary.rel_mean == pytest.approx((10.0 + 10.0 + 20.0 / 3.0) / 3.0)
        assert summary.rel_median == pytest.approx(10.0)
        assert summary.count == 3

    def test_relative_needs_positive_truth(self):
        summary = ErrorSummary.from_errors([1.0, 2.0], [0.0, 2.5])
        assert summary.rel_mean is None
        assert summary.to_file().rel is None

    def test_to_file(self):
        block = ErrorSummary.from_errors([1.0], [2.0]).to_file()
        assert block.abs.mean == 1.0
        assert block.rel.p99 == pytest.approx(50.0)
        assert block.count == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            ErrorSummary.from_errors([], [])


class TestMarkingErrors:
    def test_exact_calibration_has_no_ratio_error(
        self, create_calibration, create_markings
    ):
        markings = create_markings()
        summary = ratio_error(create_calibration(with_scale=False), markings)
        assert summary.count == len(markings.d1) * len(markings.d2)
        assert summary.p99 == pytest.approx(0.0, abs=1e-9)

    def test_exact_calibration_has_no_distance_error(
        self, create_calibration, create_markings
    ):
        markings = create_markings()
        calib = create_calibration()
        along = distance_error(calib, markings)
        both = distance_error(calib, markings, DistanceFilter.ALL)
        assert along.count == len(markings.d1)
        assert both.count == len(markings.d1) + len(markings.d2)
        assert both.mean == pytest.approx(0.0, abs=1e-9)

    def test_wrong_scale_shows_relative_error(
        self, create_calibration, create_markings
    ):
        calib = create_calibration()
        wrong = calib.with_scale(calib.scale * 1.1)
        summary = distance_error(wrong, create_markings(), DistanceFilter.ALL)
        assert summary.rel_median == pytest.approx(10.0, rel=1e-6)

    def test_ratio_needs_both_directions(self, create_calibration, create_markings):
        markings = dataclasses.replace(create_markings(), d2=[])
        with pytest.raises(EmptyMarkings):
            ratio_error(create_calibration(), markings)

    def test_distance_needs_scale_and_segments(
        self, create_calibration, create_markings
    ):
        markings = create_markings()
        with pytest.raises(MissingScale):
            distance_error(create_calibration(with_scale=False), markings)
        with pytest.raises(EmptyMarkings):
            distance_error(create_calibration(), dataclasses.replace(markings, d1=[]))


class TestCumulativeHistogram:
    def test_fractions_at_thresholds(self):
        hist = cumulative_histogram([0.05, 0.25, 0.33])
        thresholds = [t for t, _ in hist]
        fractions = [f for _, f in hist]
        np.testing.assert_allclose(thresholds, [0.0, 0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(fractions, [0.0, 1 / 3, 1 / 3, 2 / 3, 1.0])

    def test_monotone_and_reaches_one(self):
        rng = np.random.default_rng(5)
        hist = cumulative_histogram(rng.exponential(2.0, 500), bin_width=0.5)
        fractions = [f for _, f in hist]
        assert all(a <= b for a, b in zip(fractions, fractions[1:]))
        assert fractions[-1] == 1.0

    def test_empty(self):
        assert cumulative_histogram([]) == []

    def test_save_histogram(self, tmp_path):
        path = tmp_path / "hist.csv"
        save_histogram(path, [(0.0, 0.0), (0.1, 0.5), (0.2, 1.0)])
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == HISTOGRAM_HEADER
        assert rows[2] == ["0.1", "0.500000"]


class TestSpeedError:
    def test_matched_vehicles_only(self, create_measurement, create_pass):
        measurements = [create_measurement(0, 52.0), create_measurement(1, 78.0)]
        passes = [create_pass(10, 50.0), create_pass(11, 80.0), create_pass(12, 60.0)]
        summary, hist = speed_error(measurements, passes, [(0, 10), (1, 11), (2, 12)])
        assert summary.count == 2
        assert summary.mean == pytest.approx(2.0)
        assert hist[-1][1] == 1.0

    def test_nothing_matched(self, create_measurement, create_pass):
        with pytest.raises(EmptyMatches):
            speed_error([create_measurement(0, 50.0)], [create_pass(10, 50.0)], [])


def test_counting_block():
    result = CountingResult(
        matches=[(0, 1), (2, 3)], false_positives=1, missed=0, recall=1.0, fppm=0.5
    )
    block = counting_block(result)
    assert block.matched == 2
    assert block.false_positives == 1
    assert block.recall == 1.0
    assert block.fppm == 0.5
