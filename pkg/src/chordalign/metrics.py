"""Alignment quality metrics: boundary retrieval, onset error, overlap scores.

Boundary metrics treat predicted and reference onset lists as sets matched
one-to-one within a tolerance window.  Onset-error and overlap metrics
assume the prediction carries the same chord sequence as the reference
(forced alignment guarantees this) and pair segments by index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chords import ChordSegment
from .errors import DataError

DEFAULT_BOUNDARY_WINDOW = 0.3
PERCEPTUAL_MIDPOINT = 0.3
PERCEPTUAL_SCALE = 0.1


@dataclass(frozen=True)
class BoundaryScore:
    precision: float
    recall: float
    f1: float
    n_matched: int
    n_predicted: int
    n_reference: int


def match_boundaries(
    predicted: Sequence[float], reference: Sequence[float], window: float = DEFAULT_BOUNDARY_WINDOW
) -> int:
    """Greedy one-to-one matching of boundary times within ``window`` seconds.

    Both lists are scanned in sorted order; each reference boundary is
    matched to the earliest unused prediction within the window.  This is
    optimal for one-dimensional interval matching.
    """
    if window < 0:
        raise DataError(f"boundary window must be non-negative, got {window}")
    pred = sorted(float(p) for p in predicted)
    ref = sorted(float(r) for r in reference)
    matched = 0
    i = 0
    for r in ref:
        while i < len(pred) and pred[i] < r - window:
            i += 1
        if i < len(pred) and abs(pred[i] - r) <= window:
            matched += 1
            i += 1
    return matched


def boundary_score(
    predicted: Sequence[float], reference: Sequence[float], window: float = DEFAULT_BOUNDARY_WINDOW
) -> BoundaryScore:
    """Precision, recall, F1 of predicted boundaries against reference ones.

    An empty reference list is an error; an empty prediction list scores
    zero precision by convention.
    """
    if len(reference) == 0:
        raise DataError("boundary evaluation needs at least one reference boundary")
    matched = match_boundaries(predicted, reference, window)
    precision = matched / len(predicted) if predicted else 0.0
    recall = matched / len(reference)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return BoundaryScore(
        precision=precision,
        recall=recall,
        f1=f1,
        n_matched=matched,
        n_predicted=len(predicted),
        n_reference=len(reference),
    )


def _check_paired(predicted: Sequence[ChordSegment], reference: Sequence[ChordSegment]) -> None:
    if len(predicted) != len(reference):
        raise DataError(
            f"segment counts differ: {len(predicted)} predicted vs {len(reference)} reference"
        )
    if not reference:
        raise DataError("metrics need at least one segment")
    for i, (p, r) in enumerate(zip(predicted, reference)):
        if p.label_id != r.label_id:
            raise DataError(
                f"segment {i} labels differ: {p.label!r} vs {r.label!r}; "
                "index-paired metrics need identical chord sequences"
            )


def onset_errors(predicted: Sequence[ChordSegment], reference: Sequence[ChordSegment]) -> np.ndarray:
    """Absolute onset differences of index-paired segments, in seconds."""
    _check_paired(predicted, reference)
    return np.array([abs(p.onset - r.onset) for p, r in zip(predicted, reference)])


def median_onset_error(predicted: Sequence[ChordSegment], reference: Sequence[ChordSegment]) -> float:
    return float(np.median(onset_errors(predicted, reference)))


def mean_onset_error(predicted: Sequence[ChordSegment], reference: Sequence[ChordSegment]) -> float:
    return float(np.mean(onset_errors(predicted, reference)))


def percentage_correct(
    predicted: Sequence[ChordSegment],
    reference: Sequence[ChordSegment],
    tolerance: float = 0.1,
) -> float:
    """Fraction of total reference duration covered by the right chord.

    Segments are paired by index; each pair contributes the overlap of its
    time spans.  The two sides must describe the same total duration to
    within ``tolerance`` seconds (about one frame).
    """
    _check_paired(predicted, reference)
    total_ref = sum(r.duration for r in reference)
    total_pred = sum(p.duration for p in predicted)
    if total_ref <= 0:
        raise DataError("reference has zero total duration")
    if abs(total_ref - total_pred) > tolerance:
        raise DataError(
            f"total durations differ by {abs(total_ref - total_pred):.3f}s "
            f"(> {tolerance:.3f}s): {total_pred:.3f} vs {total_ref:.3f}"
        )
    overlap = 0.0
    for p, r in zip(predicted, reference):
        overlap += max(0.0, min(p.end, r.end) - max(p.onset, r.onset))
    return overlap / total_ref


def perceptual_onset_score(errors: Sequence[float]) -> float:
    """Mean sigmoid credit for onset errors: 1 / (1 + exp((e - 0.3) / 0.1)).

    Zero error scores about 0.952; an error at 0.3 s scores 0.5; large
    errors approach 0.  Input errors are absolute values in seconds.
    """
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise DataError("perceptual score needs at least one onset error")
    if np.any(errs < 0):
        raise DataError("onset errors must be absolute values")
    return float(np.mean(1.0 / (1.0 + np.exp((errs - PERCEPTUAL_MIDPOINT) / PERCEPTUAL_SCALE))))


def interior_onsets(segments: Sequence[ChordSegment]) -> list[float]:
    """Onset times excluding the track start, the boundaries HCDF can find."""
    return [s.onset for s in segments if s.onset > 1e-9]


def change_points(segments: Sequence[ChordSegment]) -> list[float]:
    """Interior onsets where the chord actually changes.

    A seam between two segments carrying the same label is not a harmonic
    change; no listener-side method can locate it, so boundary retrieval
    scores only label transitions on both sides of a comparison.
    """
    return [
        cur.onset
        for prev, cur in zip(segments, segments[1:])
        if cur.label_id != prev.label_id
    ]
