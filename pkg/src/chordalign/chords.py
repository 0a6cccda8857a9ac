"""Chord label grammar, the 169-class vocabulary, and frame-level label ops.

Labels follow the common ``ROOT:quality/bass`` text convention, e.g.
``C:maj``, ``A:min7/b3``, ``N`` for no-chord.  The class vocabulary is the
12 pitch-class roots crossed with 14 qualities plus one no-chord class:

    id = root_pc * 14 + quality_index        (0..167)
    id = 168                                  no-chord

Quality order (this ordering is load-bearing, it defines the class ids):
maj, min, 7, dim, dim7, hdim7, aug, min7, maj7, maj6, min6, minmaj7,
sus2, sus4.

Parsing accepts a wider grammar than the vocabulary (extensions such as
``maj9``, explicit degree lists, omissions); ``to_class`` reduces any
parsed symbol to the nearest vocabulary class by Jaccard similarity over
pitch-class sets.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import ChordParseError, DataError

if TYPE_CHECKING:
    from .dsp import FrameGrid

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_NATURAL_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}

QUALITIES = (
    "maj", "min", "7", "dim", "dim7", "hdim7", "aug",
    "min7", "maj7", "maj6", "min6", "minmaj7", "sus2", "sus4",
)
QUALITY_INDEX = {q: i for i, q in enumerate(QUALITIES)}

# Intervals in semitones above the root for each vocabulary quality.
QUALITY_TEMPLATES: dict[str, tuple[int, ...]] = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "7": (0, 4, 7, 10),
    "dim": (0, 3, 6),
    "dim7": (0, 3, 6, 9),
    "hdim7": (0, 3, 6, 10),
    "aug": (0, 4, 8),
    "min7": (0, 3, 7, 10),
    "maj7": (0, 4, 7, 11),
    "maj6": (0, 4, 7, 9),
    "min6": (0, 3, 7, 9),
    "minmaj7": (0, 3, 7, 11),
    "sus2": (0, 2, 7),
    "sus4": (0, 5, 7),
}

# Parse-only qualities; reduced to the vocabulary via Jaccard similarity.
EXTENDED_TEMPLATES: dict[str, tuple[int, ...]] = {
    "maj9": (0, 2, 4, 7, 11),
    "min9": (0, 2, 3, 7, 10),
    "9": (0, 2, 4, 7, 10),
    "maj11": (0, 2, 4, 5, 7, 11),
    "min11": (0, 2, 3, 5, 7, 10),
    "11": (0, 2, 4, 5, 7, 10),
    "maj13": (0, 2, 4, 5, 7, 9, 11),
    "min13": (0, 2, 3, 5, 7, 9, 10),
    "13": (0, 2, 4, 5, 7, 9, 10),
    "aug7": (0, 4, 8, 10),
    "5": (0, 7),
    "1": (0,),
}

# Scale-degree number -> semitones above the root (major scale, octave folded).
_DEGREE_SEMITONES = {
    1: 0, 2: 2, 3: 4, 4: 5, 5: 7, 6: 9, 7: 11,
    8: 0, 9: 2, 10: 4, 11: 5, 12: 7, 13: 9,
}

N_PITCHED_CLASSES = 168
NO_CHORD_ID = 168
N_CLASSES = 169
NO_PITCH_CLASS = 12  # root/bass target index meaning "none"

_ROOT_RE = re.compile(r"^([A-G])([#b]*)")
_DEGREE_RE = re.compile(r"^(\*?)([#b]*)(\d{1,2})$")


@dataclass(frozen=True)
class ChordSymbol:
    """A parsed chord label, before reduction to the class vocabulary.

    ``pitches`` holds absolute pitch classes (0..11, C=0) sounding in the
    chord.  ``quality`` may be an extended name outside the 14-entry
    vocabulary; ``to_class`` handles the reduction.
    """

    root_pc: int
    quality: str
    bass_pc: int
    pitches: frozenset[int]
    is_nochord: bool = False

    def __str__(self) -> str:
        if self.is_nochord:
            return "N"
        name = f"{PITCH_NAMES[self.root_pc]}:{self.quality}"
        if self.bass_pc != self.root_pc:
            name += f"/{(self.bass_pc - self.root_pc) % 12}"
        return name


NO_CHORD = ChordSymbol(root_pc=0, quality="N", bass_pc=0, pitches=frozenset(), is_nochord=True)


def _parse_degree(token: str, text: str) -> tuple[bool, int]:
    """Return (omit, semitones above root) for one degree token like ``b3`` or ``*5``."""
    m = _DEGREE_RE.match(token)
    if not m:
        raise ChordParseError(f"bad degree token {token!r}", text)
    omit, accidentals, number = m.group(1) == "*", m.group(2), int(m.group(3))
    if number not in _DEGREE_SEMITONES:
        raise ChordParseError(f"unsupported degree {number}", text)
    shift = accidentals.count("#") - accidentals.count("b")
    return omit, (_DEGREE_SEMITONES[number] + shift) % 12


def parse_chord(text: str) -> ChordSymbol:
    """Parse one chord label string.

    Grammar: ``N`` | ``ROOT[:QUALITY][(DEGREES)][/BASS]`` where ROOT is a
    letter A..G with optional ``#``/``b`` accidentals, QUALITY is a known
    shorthand, DEGREES is a comma-separated list of (possibly altered or
    ``*``-omitted) scale degrees, and BASS is a degree relative to the root.
    A bare root (``C``) means ``C:maj``.

    Raises:
        ChordParseError: the string does not match the grammar.
    """
    if not isinstance(text, str):
        raise ChordParseError("label must be a string", repr(text))
    s = text.strip()
    if not s:
        raise ChordParseError("empty chord label", text)
    if s == "N" or s == "X":
        # X (unknown chord) is folded into no-chord: nothing reliable sounds.
        return NO_CHORD

    m = _ROOT_RE.match(s)
    if not m:
        raise ChordParseError("expected root note A..G", text, 0)
    letter, accidentals = m.group(1), m.group(2)
    if len(accidentals) > 2:
        raise ChordParseError("too many accidentals on root", text, 1)
    root = (_NATURAL_PC[letter] + accidentals.count("#") - accidentals.count("b")) % 12
    rest = s[m.end():]

    bass_interval = 0
    if "/" in rest:
        rest, bass_token = rest.split("/", 1)
        if not bass_token:
            raise ChordParseError("empty bass degree after '/'", text)
        _, bass_interval = _parse_degree(bass_token, text)

    quality = "maj"
    degree_tokens: list[str] = []
    if rest.startswith(":"):
        body = rest[1:]
        if not body:
            raise ChordParseError("empty quality after ':'", text)
        paren = body.find("(")
        if paren >= 0:
            if not body.endswith(")"):
                raise ChordParseError("unterminated degree list", text)
            inner = body[paren + 1:-1]
            if not inner:
                raise ChordParseError("empty degree list", text)
            degree_tokens = [t.strip() for t in inner.split(",")]
            body = body[:paren]
        quality = body if body else "maj"
    elif rest:
        raise ChordParseError(f"unexpected trailing text {rest!r}", text)

    if quality in QUALITY_TEMPLATES:
        intervals = set(QUALITY_TEMPLATES[quality])
    elif quality in EXTENDED_TEMPLATES:
        intervals = set(EXTENDED_TEMPLATES[quality])
    else:
        raise ChordParseError(f"unknown quality {quality!r}", text)

    for token in degree_tokens:
        omit, semis = _parse_degree(token, text)
        if omit:
            intervals.discard(semis)
        else:
            intervals.add(semis)
    if not intervals:
        raise ChordParseError("chord has no pitches after omissions", text)

    bass_pc = (root + bass_interval) % 12
    # An inverted chord still sounds its bass note.
    pitches = frozenset((root + i) % 12 for i in intervals) | {bass_pc}
    return ChordSymbol(root_pc=root, quality=quality, bass_pc=bass_pc, pitches=pitches)


def _class_pitches(class_id: int) -> frozenset[int]:
    root, q = divmod(class_id, 14)
    return frozenset((root + i) % 12 for i in QUALITY_TEMPLATES[QUALITIES[q]])


# Precomputed pitch sets for all 168 pitched classes, used by the
# similarity reduction and by template-based consumers (synthesis, DTW).
CLASS_PITCH_SETS: tuple[frozenset[int], ...] = tuple(
    _class_pitches(c) for c in range(N_PITCHED_CLASSES)
)


def to_class(symbol: ChordSymbol) -> int:
    """Map a parsed symbol to its vocabulary class id (0..168).

    Exact root+quality matches map directly.  Anything else (extended
    qualities, degree-modified chords) maps to the pitched class with the
    highest Jaccard similarity between pitch-class sets.  Ties prefer the
    candidate with fewer chord tones, then the lower class id (lower root,
    then lower quality index).
    """
    if symbol.is_nochord:
        return NO_CHORD_ID
    if symbol.quality in QUALITY_INDEX:
        base = QUALITY_TEMPLATES[symbol.quality]
        expected = frozenset((symbol.root_pc + i) % 12 for i in base)
        if symbol.pitches == expected:
            return symbol.root_pc * 14 + QUALITY_INDEX[symbol.quality]
    pitches = set(symbol.pitches)
    if not pitches:
        return NO_CHORD_ID
    best_id, best_key = 0, None
    for cid, cand in enumerate(CLASS_PITCH_SETS):
        inter = len(pitches & cand)
        union = len(pitches | cand)
        key = (-inter / union, len(cand), cid)
        if best_key is None or key < best_key:
            best_key, best_id = key, cid
    return best_id


def label_to_class(text: str) -> int:
    """Parse then reduce in one step."""
    return to_class(parse_chord(text))


def class_to_label(class_id: int) -> str:
    """Canonical text for a class id, e.g. 133 -> ``A:min7``, 168 -> ``N``."""
    if not 0 <= class_id < N_CLASSES:
        raise DataError(f"chord class id {class_id} out of range 0..168")
    if class_id == NO_CHORD_ID:
        return "N"
    root, q = divmod(class_id, 14)
    return f"{PITCH_NAMES[root]}:{QUALITIES[q]}"


def structured_targets(class_id: int) -> tuple[int, int, np.ndarray]:
    """Per-class training targets: (root index, bass index, 12-dim pitch multi-hot).

    Index 12 means "no pitch" for root and bass.  Vocabulary classes are all
    root position, so the bass target equals the root.
    """
    if not 0 <= class_id < N_CLASSES:
        raise DataError(f"chord class id {class_id} out of range 0..168")
    pitches = np.zeros(12, dtype=np.float32)
    if class_id == NO_CHORD_ID:
        return NO_PITCH_CLASS, NO_PITCH_CLASS, pitches
    root = class_id // 14
    for pc in CLASS_PITCH_SETS[class_id]:
        pitches[pc] = 1.0
    return root, root, pitches


@dataclass(frozen=True)
class ChordSegment:
    """A timed chord span: onset and duration in seconds plus its label."""

    onset: float
    duration: float
    label_id: int
    label: str = ""

    def __post_init__(self):
        if self.duration < 0:
            raise DataError(f"segment at {self.onset:.3f}s has negative duration")
        if not self.label:
            object.__setattr__(self, "label", class_to_label(self.label_id))

    @property
    def end(self) -> float:
        return self.onset + self.duration


def upsample_uniform(class_ids: Sequence[int], n_frames: int) -> np.ndarray:
    """Stretch an untimed chord sequence over ``n_frames`` as evenly as possible.

    Earlier chords get the remainder frames: [a, b, c] over 10 frames gives
    counts (4, 3, 3).  Requires at least one frame per chord.
    """
    ids = list(class_ids)
    if not ids:
        raise DataError("cannot upsample an empty chord sequence")
    if n_frames < len(ids):
        raise DataError(f"{n_frames} frames cannot hold {len(ids)} chords")
    base, extra = divmod(n_frames, len(ids))
    out = np.empty(n_frames, dtype=np.int64)
    pos = 0
    for i, cid in enumerate(ids):
        count = base + (1 if i < extra else 0)
        out[pos:pos + count] = cid
        pos += count
    return out


def _validate_segments(segments: Iterable[ChordSegment]) -> list[ChordSegment]:
    segs = list(segments)
    for a, b in zip(segs, segs[1:]):
        if b.onset < a.onset - 1e-9:
            raise DataError(f"segments not sorted: {b.onset:.3f}s after {a.onset:.3f}s")
        if b.onset < a.end - 1e-6:
            raise DataError(f"segments overlap near {b.onset:.3f}s")
    return segs


def frame_labels_from_timed(
    segments: Iterable[ChordSegment], grid: "FrameGrid", fill: int = NO_CHORD_ID
) -> np.ndarray:
    """Rasterize timed segments onto a frame grid.

    A frame belongs to the segment whose [onset, end) span contains the
    frame's center time.  Uncovered frames get ``fill`` (no-chord).
    """
    segs = _validate_segments(segments)
    labels = np.full(grid.n_frames, fill, dtype=np.int64)
    period = grid.frame_period
    for seg in segs:
        start = int(np.ceil(seg.onset / period - 1e-9))
        stop = int(np.ceil(seg.end / period - 1e-9))
        start = max(start, 0)
        stop = min(stop, grid.n_frames)
        if start < stop:
            labels[start:stop] = seg.label_id
    return labels


def collapse_frames(frame_ids: np.ndarray, grid: "FrameGrid") -> list[ChordSegment]:
    """Merge consecutive equal frame labels into timed segments.

    Segment onset is the first frame's time; duration covers through the
    last frame's period, so adjacent segments tile without gaps.
    """
    ids = np.asarray(frame_ids)
    if ids.ndim != 1 or ids.size == 0:
        raise DataError("collapse_frames needs a non-empty 1-D label array")
    if ids.size != grid.n_frames:
        raise DataError(f"{ids.size} labels for a grid of {grid.n_frames} frames")
    period = grid.frame_period
    boundaries = np.flatnonzero(np.diff(ids)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [ids.size]))
    return [
        ChordSegment(
            onset=float(s * period),
            duration=float((e - s) * period),
            label_id=int(ids[s]),
        )
        for s, e in zip(starts, ends)
    ]
