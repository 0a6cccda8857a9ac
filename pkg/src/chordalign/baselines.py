"""Baseline aligners: harmonic-change peak picking and chroma DTW.

Both work purely from chroma features, no trained model.  The harmonic
change detection function (HCDF) finds chord-change candidates as peaks in
the rate of change of a 6-D tonal centroid; DTW warps a reference chroma
sequence rendered from approximately-timed labels onto the performance.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .chords import NO_CHORD_ID, ChordSegment, CLASS_PITCH_SETS, frame_labels_from_timed
from .dsp import HOP_LENGTH, SAMPLE_RATE, AudioBuffer, FrameGrid, chroma, cqt, resample
from .errors import DataError, NumericError

HCDF_SIGMA_FRAMES = 8.0
HCDF_THRESHOLD = 1.0

# Step weights for the (d_ref, d_perf) DTW moves.
_DTW_STEPS = {(1, 1): 2.0, (1, 2): 3.0, (2, 1): 3.0}


def tonal_centroid_matrix() -> np.ndarray:
    """The 6x12 projection from chroma onto interlocking interval circles.

    Rows pair sine/cosine coordinates on the circle of fifths (radius 1),
    minor thirds (radius 1), and major thirds (radius 0.5).
    """
    l = np.arange(12)
    return np.stack([
        np.sin(l * 7.0 * np.pi / 6.0),
        np.cos(l * 7.0 * np.pi / 6.0),
        np.sin(l * 3.0 * np.pi / 2.0),
        np.cos(l * 3.0 * np.pi / 2.0),
        0.5 * np.sin(l * 2.0 * np.pi / 3.0),
        0.5 * np.cos(l * 2.0 * np.pi / 3.0),
    ])


def tonal_centroid(chroma_frames: np.ndarray) -> np.ndarray:
    """Map (12, T) chroma to (6, T) tonal centroids.

    Each frame is L1-normalized first; all-zero frames map to the origin.
    """
    c = np.asarray(chroma_frames, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != 12:
        raise DataError(f"expected (12, T) chroma, got shape {c.shape}")
    norms = c.sum(axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return tonal_centroid_matrix() @ (c / safe)


def harmonic_change(chroma_frames: np.ndarray, sigma: float = HCDF_SIGMA_FRAMES) -> np.ndarray:
    """HCDF curve: centered-difference magnitude of the smoothed centroid.

    Returns one value per interior frame (length T-2 for T input frames);
    value n measures change between frames n-1 and n+1.
    """
    centroid = tonal_centroid(chroma_frames)
    if centroid.shape[1] < 3:
        raise DataError("harmonic change needs at least three frames")
    if sigma > 0:
        centroid = gaussian_filter1d(centroid, sigma=sigma, axis=1, mode="nearest")
    diff = centroid[:, 2:] - centroid[:, :-2]
    return np.linalg.norm(diff, axis=0)


def hcdf_boundaries(
    audio: AudioBuffer,
    sigma: float = HCDF_SIGMA_FRAMES,
    threshold: float = HCDF_THRESHOLD,
) -> np.ndarray:
    """Chord-change candidate times from harmonic change peaks.

    Peaks are interior local maxima of the HCDF curve at least
    ``threshold`` times its mean.  Returns onset times in seconds.
    """
    audio = resample(audio, SAMPLE_RATE)
    features = cqt(audio)
    curve = harmonic_change(chroma(features), sigma=sigma)
    floor = threshold * float(curve.mean())
    peaks, _ = find_peaks(curve, height=floor)
    period = features.grid.frame_period
    return (peaks + 1) * period  # curve index n is frame n+1


def reference_chroma(segments: Sequence[ChordSegment], grid: FrameGrid) -> np.ndarray:
    """Binary pitch-class templates of timed labels on a frame grid."""
    labels = frame_labels_from_timed(segments, grid)
    out = np.zeros((12, grid.n_frames))
    for t, cid in enumerate(labels):
        if cid != NO_CHORD_ID:
            out[list(CLASS_PITCH_SETS[cid]), t] = 1.0
    return out


def cosine_cost(reference: np.ndarray, performance: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cosine similarity, shape (R, P).

    A zero frame against a pitched frame costs 1; two zero frames cost 0,
    so silent spans lock onto no-chord templates instead of floating.
    """
    r = np.asarray(reference, dtype=np.float64)
    p = np.asarray(performance, dtype=np.float64)
    if r.ndim != 2 or p.ndim != 2 or r.shape[0] != p.shape[0]:
        raise DataError("cost needs (D, R) and (D, P) matrices with equal D")
    rn = np.linalg.norm(r, axis=0)
    pn = np.linalg.norm(p, axis=0)
    sim = (r / np.where(rn > 0, rn, 1.0)).T @ (p / np.where(pn > 0, pn, 1.0))
    sim[np.ix_(rn == 0, pn == 0)] = 1.0
    return 1.0 - sim


def dtw_path(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost warping path from (0, 0) to (R-1, P-1).

    Moves are diagonal (weight 2) and the two skip steps (1,2) and (2,1)
    (weight 3), so the plain diagonal is never beaten by zig-zagging.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise DataError("cost matrix must be 2-D and non-empty")
    n_ref, n_perf = c.shape
    inf = np.inf
    d = np.full((n_ref, n_perf), inf)
    ptr = np.zeros((n_ref, n_perf), dtype=np.int8)  # index into step list
    steps = list(_DTW_STEPS.items())
    d[0, 0] = _DTW_STEPS[(1, 1)] * c[0, 0]
    for i in range(n_ref):
        for s, ((di, dj), w) in enumerate(steps):
            pi = i - di
            if pi < 0:
                continue
            prev = d[pi]
            cand = np.full(n_perf, inf)
            cand[dj:] = prev[:-dj] + w * c[i, dj:]
            better = cand < d[i]
            d[i][better] = cand[better]
            ptr[i][better] = s
    total = d[n_ref - 1, n_perf - 1]
    if not np.isfinite(total):
        raise NumericError("no valid warping path connects the two sequences")
    path = [(n_ref - 1, n_perf - 1)]
    i, j = n_ref - 1, n_perf - 1
    while (i, j) != (0, 0):
        di, dj = steps[ptr[i, j]][0]
        i, j = i - di, j - dj
        path.append((i, j))
    path.reverse()
    return path, float(total)


# Performance frames quieter than this fraction of the loudest frame are
# treated as silent; cosine directions of residual bleed are meaningless.
_SILENCE_GATE = 0.01


def dtw_align(audio: AudioBuffer, segments: Sequence[ChordSegment]) -> list[ChordSegment]:
    """Warp approximately-timed labels onto a performance recording.

    Renders binary template chroma from the given segment timings, warps it
    onto the performance chroma with DTW, and reads each onset's position
    off the path.  A step consuming two performance frames aligns both to
    its landing reference frame, so a chord starts at the first frame its
    onset row consumed.  Output segments tile the performance duration.
    """
    if not segments:
        raise DataError("dtw_align needs at least one segment")
    audio = resample(audio, SAMPLE_RATE)
    features = cqt(audio)
    perf = chroma(features)
    norms = np.linalg.norm(perf, axis=0)
    perf[:, norms < _SILENCE_GATE * norms.max()] = 0.0
    period = features.grid.frame_period
    ref_dur = segments[-1].end
    if ref_dur <= 0:
        raise DataError("reference segments have zero duration")
    ref_grid = FrameGrid(n_frames=max(int(ref_dur / period) + 1, 1))
    ref = reference_chroma(segments, ref_grid)
    path, _ = dtw_path(cosine_cost(ref, perf))

    first_perf = np.full(ref_grid.n_frames, -1, dtype=np.int64)
    first_perf[path[0][0]] = path[0][1]
    for (_, j_prev), (i, _) in zip(path, path[1:]):
        first_perf[i] = j_prev + 1
    matched = np.flatnonzero(first_perf >= 0)

    onsets = []
    for seg in segments:
        r = min(int(np.ceil(seg.onset / period - 1e-9)), ref_grid.n_frames - 1)
        k = np.searchsorted(matched, r)
        r_used = matched[min(k, matched.size - 1)]
        onsets.append(float(first_perf[r_used]) * period)

    # Light cleanup: onsets must advance by at least one frame and leave
    # room for every remaining segment before the track end.
    n_perf = features.grid.n_frames
    for m in range(1, len(onsets)):
        onsets[m] = max(onsets[m], onsets[m - 1] + period)
    limit = features.grid.duration
    for m in range(len(onsets) - 1, -1, -1):
        cap = limit - (len(onsets) - m) * period
        onsets[m] = min(onsets[m], cap)
        limit = onsets[m]

    out = []
    for m, seg in enumerate(segments):
        end = onsets[m + 1] if m + 1 < len(onsets) else n_perf * period
        out.append(
            ChordSegment(
                onset=onsets[m],
                duration=max(end - onsets[m], period),
                label_id=seg.label_id,
                label=seg.label,
            )
        )
    return out
