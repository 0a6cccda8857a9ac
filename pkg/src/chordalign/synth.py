"""Synthetic chord-audio generator with exact ground-truth timings.

Each track is a random chord progression rendered as a sum of harmonics
per chord tone, with short raised-cosine crossfades at segment edges so
boundaries are click-free but sharp.  The default vocabulary subset
spans eight qualities across all roots while avoiding pitch-class sets
that collide across classes (no maj6/min7 or hdim7/min6 twins, no
rotation-symmetric qualities), so frame labels stay identifiable from
audio.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .chords import (
    NO_CHORD_ID,
    QUALITY_INDEX,
    CLASS_PITCH_SETS,
    ChordSegment,
    class_to_label,
)
from .errors import DataError, UsageError

DEFAULT_QUALITIES = ("maj", "min", "7", "maj7", "min7", "dim", "hdim7", "minmaj7")
CROSSFADE_SECONDS = 0.010
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for one generated corpus."""

    n_tracks: int = 200
    duration_range: tuple[float, float] = (12.0, 20.0)
    chord_duration_range: tuple[float, float] = (1.0, 4.0)
    qualities: tuple[str, ...] = DEFAULT_QUALITIES
    repeat_prob: float = 0.1
    nochord_prob: float = 0.05
    harmonics: int = 4
    noise_level: float = 0.0
    sample_rate: int = 22050
    seed: int = 0

    def __post_init__(self):
        if self.n_tracks <= 0:
            raise UsageError("n_tracks must be positive")
        lo, hi = self.duration_range
        clo, chi = self.chord_duration_range
        if not (0 < lo <= hi) or not (0 < clo <= chi):
            raise UsageError("duration ranges must be positive and ordered")
        if clo > lo:
            raise UsageError("minimum chord duration exceeds minimum track duration")
        for q in self.qualities:
            if q not in QUALITY_INDEX:
                raise UsageError(f"unknown quality {q!r} in synth vocabulary")
        if not self.qualities:
            raise UsageError("synth vocabulary needs at least one quality")
        if not 0 <= self.repeat_prob < 1 or not 0 <= self.nochord_prob < 1:
            raise UsageError("probabilities must lie in [0, 1)")
        if self.harmonics < 1:
            raise UsageError("need at least one harmonic")

    def class_ids(self) -> list[int]:
        """All pitched class ids in this corpus vocabulary, ascending."""
        return sorted(
            root * 14 + QUALITY_INDEX[q] for root in range(12) for q in self.qualities
        )


def sample_progression(spec: SynthSpec, rng: np.random.Generator) -> list[ChordSegment]:
    """Draw one random progression covering a random track duration.

    Chord durations are uniform in ``chord_duration_range``; a tail shorter
    than the minimum chord duration is absorbed into the last chord.  After
    the first chord, each segment is no-chord with ``nochord_prob``, a
    repeat of the previous chord with ``repeat_prob``, else a fresh draw.
    Consecutive segments only share a class id through the repeat branch.
    """
    target = float(rng.uniform(*spec.duration_range))
    classes = spec.class_ids()
    segments: list[ChordSegment] = []
    cursor = 0.0
    prev: int | None = None
    min_chord = spec.chord_duration_range[0]
    while cursor < target - 1e-9:
        dur = float(rng.uniform(*spec.chord_duration_range))
        if target - (cursor + dur) < min_chord:
            dur = target - cursor
        if prev is None:
            cid = int(classes[rng.integers(len(classes))])
        else:
            u = float(rng.uniform())
            if u < spec.nochord_prob and prev != NO_CHORD_ID:
                cid = NO_CHORD_ID
            elif u < spec.nochord_prob + spec.repeat_prob and prev != NO_CHORD_ID:
                cid = prev
            else:
                pool = [c for c in classes if c != prev]
                cid = int(pool[rng.integers(len(pool))])
        segments.append(ChordSegment(onset=cursor, duration=dur, label_id=cid))
        cursor += dur
        prev = cid
    return segments


def chord_frequencies(class_id: int) -> np.ndarray:
    """Fundamental frequencies of one chord voiced ascending from octave 3.

    The root sits in octave 3 (C3 = MIDI 48); remaining tones stack upward
    in interval order, which keeps inversionally-related chords acoustically
    distinct.  No-chord returns an empty array.
    """
    if class_id == NO_CHORD_ID:
        return np.array([])
    root = class_id // 14
    intervals = sorted((pc - root) % 12 for pc in CLASS_PITCH_SETS[class_id])
    midi = np.array([48 + root + i for i in intervals], dtype=np.float64)
    return 440.0 * 2.0 ** ((midi - 69.0) / 12.0)


def render(
    progression: Sequence[ChordSegment],
    sample_rate: int = 22050,
    harmonics: int = 4,
    noise_level: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render a timed progression to mono float samples in [-1, 1].

    Each chord tone carries ``harmonics`` partials at amplitude 1/h; the
    per-segment gain bounds the waveform well below clipping.  Segments
    fade in and out over 10 ms so boundaries are click-free.  Gaussian
    noise is added when ``noise_level`` > 0 (requires ``rng``).
    """
    if not progression:
        raise DataError("cannot render an empty progression")
    total = progression[-1].end
    n = int(round(total * sample_rate))
    if n <= 0:
        raise DataError("progression has zero duration")
    out = np.zeros(n)
    h = np.arange(1, harmonics + 1)
    amp_sum = float(np.sum(1.0 / h))
    for seg in progression:
        freqs = chord_frequencies(seg.label_id)
        if freqs.size == 0:
            continue
        i0 = int(round(seg.onset * sample_rate))
        i1 = min(int(round(seg.end * sample_rate)), n)
        if i1 <= i0:
            continue
        t = np.arange(i1 - i0) / sample_rate
        phases = 2.0 * np.pi * t[:, None, None] * freqs[None, :, None] * h[None, None, :]
        tone = (np.sin(phases) / h[None, None, :]).sum(axis=(1, 2))
        gain = 0.8 / (freqs.size * amp_sum)
        fade = min(int(CROSSFADE_SECONDS * sample_rate), (i1 - i0) // 2)
        env = np.ones(i1 - i0)
        if fade > 0:
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
            env[:fade] = ramp
            env[-fade:] = ramp[::-1]
        out[i0:i1] += gain * env * tone
    if noise_level > 0:
        if rng is None:
            raise UsageError("noise_level > 0 needs a random generator")
        out = out + rng.normal(0.0, noise_level, n)
    return out


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def generate_corpus(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write a corpus of WAV + LAB pairs plus a checksummed manifest.

    Tracks are named 0000.wav/0000.lab upward.  Per-track randomness comes
    from spawned child seeds of ``spec.seed``, so any track is reproducible
    independently of the others.  Returns the manifest dictionary.
    """
    from .fileio import atomic_write_text, write_wav  # local import avoids a cycle

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_tracks)
    tracks = []
    for i in range(spec.n_tracks):
        rng = np.random.default_rng(children[i])
        progression = sample_progression(spec, rng)
        samples = render(
            progression,
            sample_rate=spec.sample_rate,
            harmonics=spec.harmonics,
            noise_level=spec.noise_level,
            rng=rng,
        )
        stem = f"{i:04d}"
        wav_path = out / f"{stem}.wav"
        lab_path = out / f"{stem}.lab"
        write_wav(wav_path, samples, spec.sample_rate)
        lines = [
            f"{seg.onset:.6f}\t{seg.end:.6f}\t{seg.label}" for seg in progression
        ]
        atomic_write_text(lab_path, "\n".join(lines) + "\n")
        tracks.append(
            {
                "stem": stem,
                "wav": wav_path.name,
                "lab": lab_path.name,
                "duration": round(progression[-1].end, 6),
                "n_segments": len(progression),
                "sha256_wav": _sha256(wav_path),
                "sha256_lab": _sha256(lab_path),
            }
        )
    manifest = {
        "format_version": MANIFEST_VERSION,
        "spec": asdict(spec),
        "tracks": tracks,
    }
    atomic_write_text(out / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
