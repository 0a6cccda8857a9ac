"""CTC forced alignment of an untimed chord sequence to frame emissions.

The acoustic model emits 169-class frame probabilities with no blank.  A
pseudo-blank column with constant probability ``eps`` is appended and every
row renormalized, giving the decoder a way to sit between chords without
asserting any of them.  Alignment then runs the standard CTC trellis over
the expanded sequence (blank, c1, blank, ..., cM, blank):

* the forward algorithm scores the label sequence (sum over paths),
* Viterbi with backtrace recovers the single best monotone path.

Tie-breaking is fixed so decoding is fully deterministic: prefer staying in
the current trellis state over advancing, prefer advancing one state over
skipping two, and prefer ending on the last chord over the final blank.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chords import N_CLASSES, ChordSegment, class_to_label
from .dsp import FrameGrid
from .errors import DataError, NumericError

BLANK_ID = N_CLASSES  # index of the appended pseudo-blank column (169)
DEFAULT_BLANK_EPS = 1e-3


@dataclass
class EmissionMatrix:
    """Frame-wise log-probabilities over the 169 chord classes.

    Rows are frames on ``grid``; each row of ``log_probs`` is a normalized
    distribution (sums to 1 in probability space) before any blank column
    is appended.
    """

    log_probs: np.ndarray
    grid: FrameGrid

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.ndim != 2 or self.log_probs.shape[1] != N_CLASSES:
            raise DataError(f"expected (T, {N_CLASSES}) log-probs, got {self.log_probs.shape}")
        if self.log_probs.shape[0] != self.grid.n_frames:
            raise DataError("emission frame count disagrees with its grid")


def add_blank(log_probs: np.ndarray, eps: float = DEFAULT_BLANK_EPS) -> np.ndarray:
    """Append a constant pseudo-blank column and renormalize rows.

    In probability space: p_new = [p * 1, eps] / (1 + eps), i.e. every
    class probability is scaled by 1/(1+eps) and the blank gets
    eps/(1+eps).  Operates in log space throughout.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise DataError(f"expected a 2-D log-prob matrix, got shape {log_probs.shape}")
    if eps <= 0:
        raise DataError(f"blank probability eps must be positive, got {eps}")
    scale = np.log1p(eps)
    blank = np.full((log_probs.shape[0], 1), np.log(eps) - scale)
    return np.concatenate([log_probs - scale, blank], axis=1)


def expand_labels(class_ids: Sequence[int]) -> np.ndarray:
    """Interleave blanks around the labels: (blank, c1, blank, ..., cM, blank)."""
    ids = np.asarray(list(class_ids), dtype=np.int64)
    if ids.size == 0:
        raise DataError("cannot align an empty chord sequence")
    if np.any(ids < 0) or np.any(ids >= N_CLASSES):
        raise DataError("chord class ids must lie in 0..168")
    expanded = np.full(2 * ids.size + 1, BLANK_ID, dtype=np.int64)
    expanded[1::2] = ids
    return expanded


def min_frames(class_ids: Sequence[int]) -> int:
    """Fewest frames that can realize the sequence.

    Each chord needs one frame, plus one separating blank frame between
    every pair of equal consecutive chords.
    """
    ids = list(class_ids)
    if not ids:
        raise DataError("cannot align an empty chord sequence")
    repeats = sum(1 for a, b in zip(ids, ids[1:]) if a == b)
    return len(ids) + repeats


def _trellis_inputs(log_probs_aug: np.ndarray, class_ids: Sequence[int]):
    expanded = expand_labels(class_ids)
    t_frames = log_probs_aug.shape[0]
    if log_probs_aug.shape[1] != N_CLASSES + 1:
        raise DataError("expected log-probs with the blank column appended")
    if t_frames < min_frames(class_ids):
        raise DataError(
            f"{t_frames} frames cannot realize {len(list(class_ids))} chords "
            f"(minimum {min_frames(class_ids)})"
        )
    # Skipping from position s-2 to s is allowed only across distinct labels.
    s = expanded.size
    can_skip = np.zeros(s, dtype=bool)
    if s > 2:
        # Even positions are blanks, equal two apart, so this also forbids
        # blank-to-blank skips without a special case.
        can_skip[2:] = expanded[2:] != expanded[:-2]
    # Emissions gathered per expanded position.
    em = log_probs_aug[:, expanded]
    return expanded, em, can_skip


def ctc_log_likelihood(log_probs_aug: np.ndarray, class_ids: Sequence[int]) -> float:
    """Log-probability of the chord sequence: sum over all monotone paths."""
    _, em, can_skip = _trellis_inputs(log_probs_aug, class_ids)
    t_frames, s = em.shape
    neg = -np.inf
    alpha = np.full(s, neg)
    alpha[0] = em[0, 0]
    if s > 1:
        alpha[1] = em[0, 1]
    for t in range(1, t_frames):
        stay = alpha
        adv1 = np.concatenate(([neg], alpha[:-1]))
        adv2 = np.where(can_skip, np.concatenate(([neg, neg], alpha[:-2])), neg)
        alpha = np.logaddexp(np.logaddexp(stay, adv1), adv2) + em[t]
    total = np.logaddexp(alpha[s - 1], alpha[s - 2]) if s > 1 else alpha[s - 1]
    if not np.isfinite(total):
        raise NumericError("no feasible alignment path has positive probability")
    return float(total)


def ctc_loss(log_probs_aug: np.ndarray, class_ids: Sequence[int]) -> float:
    """Negative log-likelihood form of :func:`ctc_log_likelihood`."""
    return -ctc_log_likelihood(log_probs_aug, class_ids)


def viterbi(log_probs_aug: np.ndarray, class_ids: Sequence[int]) -> tuple[np.ndarray, float]:
    """Single best trellis path and its log-probability.

    Returns the per-frame expanded-position index (length T).  On score
    ties: staying beats advancing by one, which beats advancing by two;
    at the final frame the last chord beats the trailing blank.
    """
    _, em, can_skip = _trellis_inputs(log_probs_aug, class_ids)
    t_frames, s = em.shape
    neg = -np.inf
    delta = np.full(s, neg)
    delta[0] = em[0, 0]
    if s > 1:
        delta[1] = em[0, 1]
    ptr = np.zeros((t_frames, s), dtype=np.int8)
    for t in range(1, t_frames):
        best = delta.copy()
        step = np.zeros(s, dtype=np.int8)
        adv1 = np.concatenate(([neg], delta[:-1]))
        better = adv1 > best
        best[better] = adv1[better]
        step[better] = 1
        adv2 = np.where(can_skip, np.concatenate(([neg, neg], delta[:-2])), neg)
        better = adv2 > best
        best[better] = adv2[better]
        step[better] = 2
        delta = best + em[t]
        ptr[t] = step
    if s > 1 and delta[s - 2] >= delta[s - 1]:
        state = s - 2
    else:
        state = s - 1
    score = delta[state]
    if not np.isfinite(score):
        raise NumericError("no feasible alignment path has positive probability")
    path = np.empty(t_frames, dtype=np.int64)
    for t in range(t_frames - 1, 0, -1):
        path[t] = state
        state -= int(ptr[t, state])
    path[0] = state
    if path[0] not in (0, 1):
        raise NumericError("Viterbi backtrace did not reach the start state")
    return path, float(score)


def path_log_probability(log_probs_aug: np.ndarray, path: np.ndarray, class_ids: Sequence[int]) -> float:
    """Log-probability of one explicit trellis path, with validity checks."""
    expanded, em, can_skip = _trellis_inputs(log_probs_aug, class_ids)
    path = np.asarray(path, dtype=np.int64)
    if path.shape != (em.shape[0],):
        raise DataError(f"path length {path.size} does not match {em.shape[0]} frames")
    if path[0] not in (0, 1):
        raise DataError("path must start on the leading blank or the first chord")
    if path[-1] not in (expanded.size - 1, expanded.size - 2):
        raise DataError("path must end on the last chord or the trailing blank")
    total = 0.0
    for t in range(path.size):
        pos = int(path[t])
        if not 0 <= pos < expanded.size:
            raise DataError(f"path position {pos} out of range at frame {t}")
        if t > 0:
            jump = pos - int(path[t - 1])
            if jump not in (0, 1, 2) or (jump == 2 and not can_skip[pos]):
                raise DataError(f"illegal transition {int(path[t - 1])}->{pos} at frame {t}")
        total += em[t, pos]
    return float(total)


def path_to_segments(path: np.ndarray, class_ids: Sequence[int], grid: FrameGrid) -> list[ChordSegment]:
    """Convert a trellis path into one timed segment per chord occurrence.

    Blank frames are absorbed into the preceding chord; blanks before the
    first chord go to the first chord, so the segments tile the track.
    """
    ids = list(class_ids)
    path = np.asarray(path, dtype=np.int64)
    if path.size != grid.n_frames:
        raise DataError("path length does not match the frame grid")
    owner = np.empty(path.size, dtype=np.int64)
    current = 0
    for t in range(path.size):
        pos = int(path[t])
        if pos % 2 == 1:
            current = (pos - 1) // 2
        owner[t] = current
    period = grid.frame_period
    segments = []
    for m, cid in enumerate(ids):
        frames = np.flatnonzero(owner == m)
        if frames.size == 0:
            raise NumericError(f"alignment path skipped chord {m}")
        start, stop = int(frames[0]), int(frames[-1]) + 1
        segments.append(
            ChordSegment(
                onset=float(start * period),
                duration=float((stop - start) * period),
                label_id=int(cid),
                label=class_to_label(int(cid)),
            )
        )
    return segments


def forced_align(
    emissions: EmissionMatrix,
    class_ids: Sequence[int],
    blank_eps: float = DEFAULT_BLANK_EPS,
) -> tuple[list[ChordSegment], float]:
    """Align a chord sequence to emissions; returns (segments, path log-prob).

    Produces exactly one segment per chord occurrence, in order, with
    non-negative durations that tile the emission grid end to end.
    """
    aug = add_blank(emissions.log_probs, eps=blank_eps)
    path, score = viterbi(aug, class_ids)
    return path_to_segments(path, class_ids, emissions.grid), score
