"""Boundary retrieval, onset error, overlap, and perceptual metrics."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chordalign import metrics
from chordalign.chords import ChordSegment
from chordalign.errors import DataError


def segs(spans: list[tuple[float, float, int]]) -> list[ChordSegment]:
    return [ChordSegment(onset=o, duration=d, label_id=c) for o, d, c in spans]


class TestBoundary:
    def test_worked_example(self):
        # Predicted {0.0, 2.1} vs reference {0.0, 2.5} at 0.3 s tolerance:
        # one match, so precision = recall = F1 = 0.5.
        score = metrics.boundary_score([0.0, 2.1], [0.0, 2.5], window=0.3)
        assert score.precision == pytest.approx(0.5)
        assert score.recall == pytest.approx(0.5)
        assert score.f1 == pytest.approx(0.5)
        assert score.n_matched == 1

    def test_perfect_and_empty(self):
        score = metrics.boundary_score([1.0, 2.0], [1.0, 2.0])
        assert score.f1 == 1.0
        score = metrics.boundary_score([], [1.0])
        assert score.precision == 0.0 and score.recall == 0.0 and score.f1 == 0.0

    def test_empty_reference_is_error(self):
        with pytest.raises(DataError):
            metrics.boundary_score([1.0], [])

    def test_matching_is_one_to_one(self):
        # Two predictions near one reference: only one may match.
        score = metrics.boundary_score([1.0, 1.1], [1.0], window=0.3)
        assert score.n_matched == 1
        assert score.precision == pytest.approx(0.5)
        assert score.recall == pytest.approx(1.0)

    def test_window_edge_inclusive(self):
        assert metrics.match_boundaries([1.25], [1.0], window=0.25) == 1
        assert metrics.match_boundaries([1.2501], [1.0], window=0.25) == 0

    def test_order_independent(self):
        a = metrics.match_boundaries([3.0, 1.0, 2.0], [2.1, 0.9], window=0.2)
        b = metrics.match_boundaries([1.0, 2.0, 3.0], [0.9, 2.1], window=0.2)
        assert a == b == 2

    def test_greedy_matching_is_optimal_here(self):
        # ref 1.0 could grab pred 1.25, starving ref 1.3; earliest-feasible
        # matching pairs (1.0, 0.8) and (1.3, 1.25) instead.
        assert metrics.match_boundaries([0.8, 1.25], [1.0, 1.3], window=0.3) == 2

    @given(
        st.lists(st.floats(0, 100, allow_nan=False), max_size=20),
        st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=20),
        st.floats(0, 2),
    )
    @settings(max_examples=150)
    def test_bounds_and_self_match(self, pred, ref, window):
        score = metrics.boundary_score(pred, ref, window)
        assert 0 <= score.precision <= 1
        assert 0 <= score.recall <= 1
        assert 0 <= score.f1 <= 1
        assert score.n_matched <= min(len(pred), len(ref))
        perfect = metrics.boundary_score(ref, ref, window)
        assert perfect.f1 == 1.0


class TestOnsetErrors:
    def test_worked_example(self):
        pred = segs([(0.1, 1.0, 5), (1.3, 1.0, 6), (3.0, 1.2, 7)])
        ref = segs([(0.0, 1.0, 5), (1.0, 1.3, 6), (2.2, 2.0, 7)])
        errors = metrics.onset_errors(pred, ref)
        assert errors.tolist() == pytest.approx([0.1, 0.3, 0.8])
        assert metrics.median_onset_error(pred, ref) == pytest.approx(0.3)
        assert metrics.mean_onset_error(pred, ref) == pytest.approx(0.4)

    def test_count_mismatch_is_error(self):
        with pytest.raises(DataError):
            metrics.onset_errors(segs([(0, 1, 1)]), segs([(0, 1, 1), (1, 1, 2)]))

    def test_label_mismatch_is_error(self):
        with pytest.raises(DataError):
            metrics.onset_errors(segs([(0, 1, 1)]), segs([(0, 1, 2)]))


class TestPercentageCorrect:
    def test_identical_is_one(self):
        ref = segs([(0, 2, 1), (2, 2, 2)])
        assert metrics.percentage_correct(ref, ref) == pytest.approx(1.0)

    def test_hand_computed_overlap(self):
        ref = segs([(0.0, 2.0, 1), (2.0, 2.0, 2)])
        pred = segs([(0.0, 1.5, 1), (1.5, 2.5, 2)])
        # overlaps: min(1.5,2)-0 = 1.5 and min(4,4)-max(1.5,2) = 2.0
        assert metrics.percentage_correct(pred, ref) == pytest.approx(3.5 / 4.0)

    def test_duration_mismatch_is_error(self):
        ref = segs([(0, 2, 1)])
        pred = segs([(0, 3, 1)])
        with pytest.raises(DataError):
            metrics.percentage_correct(pred, ref)

    def test_within_tolerance_accepted(self):
        ref = segs([(0, 2.0, 1)])
        pred = segs([(0.05, 2.0, 1)])  # totals match; onsets shifted
        assert metrics.percentage_correct(pred, ref) == pytest.approx(1.95 / 2.0)


class TestPerceptual:
    def test_zero_error_score(self):
        assert metrics.perceptual_onset_score([0.0]) == pytest.approx(0.952574, abs=1e-6)

    def test_midpoint(self):
        assert metrics.perceptual_onset_score([0.3]) == pytest.approx(0.5)

    def test_monotone_decreasing(self):
        values = [metrics.perceptual_onset_score([e]) for e in (0.0, 0.1, 0.3, 0.6, 2.0)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert metrics.perceptual_onset_score([10.0]) < 1e-3

    def test_mean_of_per_onset_scores(self):
        single = [metrics.perceptual_onset_score([e]) for e in (0.1, 0.5)]
        combined = metrics.perceptual_onset_score([0.1, 0.5])
        assert combined == pytest.approx(sum(single) / 2)

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            metrics.perceptual_onset_score([-0.1])
        with pytest.raises(DataError):
            metrics.perceptual_onset_score([])


class TestInteriorOnsets:
    def test_drops_track_start(self):
        onsets = metrics.interior_onsets(segs([(0.0, 1, 1), (1.0, 1, 2), (2.0, 1, 3)]))
        assert onsets == [1.0, 2.0]


class TestChangePoints:
    def test_drops_track_start_and_repeats(self):
        # The seam at 2.0 sits between two segments of the same chord, so
        # it is not a change point.
        onsets = metrics.change_points(
            segs([(0.0, 1, 1), (1.0, 1, 2), (2.0, 1, 2), (3.0, 1, 3)])
        )
        assert onsets == [1.0, 3.0]

    def test_all_distinct_matches_interior(self):
        spans = segs([(0.0, 1, 1), (1.0, 1, 2), (2.0, 1, 3)])
        assert metrics.change_points(spans) == metrics.interior_onsets(spans)

    def test_single_segment(self):
        assert metrics.change_points(segs([(0.0, 5, 1)])) == []
