"""File formats: WAV audio, LAB chord annotations, chord lists, features.

All writers go through a temp-file-plus-rename so a crash never leaves a
half-written artifact behind.  LAB files are the usual three-column text
format (onset, end, label, whitespace separated); chord list files hold
one untimed label per line with ``#`` comments.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from .chords import ChordSegment, label_to_class, parse_chord, to_class
from .dsp import HOP_LENGTH, SAMPLE_RATE, AudioBuffer
from .errors import DataError

FEATURE_DTYPE = "<f4"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | Path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_wav(path: str | Path) -> AudioBuffer:
    """Load a WAV file as mono float64 in [-1, 1].

    Integer PCM (16/24/32-bit) is scaled by its full range; float data is
    taken as-is.  Multi-channel audio is averaged down to mono.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM, atomically.

    Quantizes by 32768 (the same scale :func:`read_wav` divides by) so a
    write/read cycle stays within half a quantization step.
    """
    samples = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    buf = io.BytesIO()
    wavfile.write(buf, sample_rate, pcm)
    atomic_write_bytes(path, buf.getvalue())


def read_lab(path: str | Path) -> list[ChordSegment]:
    """Parse a LAB file into validated, sorted, non-overlapping segments."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    segments: list[ChordSegment] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'onset end label', got {raw!r}")
        try:
            onset, end = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad time value: {exc}") from exc
        if end < onset:
            raise DataError(f"{path}:{lineno}: segment ends before it starts")
        symbol = parse_chord(parts[2])
        segments.append(
            ChordSegment(onset=onset, duration=end - onset, label_id=to_class(symbol), label=parts[2])
        )
    if not segments:
        raise DataError(f"{path}: no segments found")
    for a, b in zip(segments, segments[1:]):
        if b.onset < a.onset - 1e-9:
            raise DataError(f"{path}: segments out of order near {b.onset:.3f}s")
        if b.onset < a.end - 1e-6:
            raise DataError(f"{path}: segments overlap near {b.onset:.3f}s")
    return segments


def write_lab(path: str | Path, segments: Sequence[ChordSegment]) -> None:
    """Write segments in three-column LAB format, atomically."""
    if not segments:
        raise DataError("refusing to write an empty LAB file")
    lines = [f"{seg.onset:.6f}\t{seg.end:.6f}\t{seg.label}" for seg in segments]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _comment_start(line: str) -> int:
    # '#' opens a comment only at line start or after whitespace; attached
    # to a token it is an accidental (F#:min)
    for i, ch in enumerate(line):
        if ch == "#" and (i == 0 or line[i - 1].isspace()):
            return i
    return len(line)


def read_chord_list(path: str | Path) -> tuple[list[int], list[str]]:
    """Read an untimed chord sequence file: one label per line.

    Blank lines and ``#`` comments are skipped; a ``#`` inside a label is
    data, so ``F#:min`` survives.  Returns parallel lists of class ids and
    the original label texts.  Parse failures report the file and line
    number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"chord list file not found: {path}")
    ids: list[int] = []
    texts: list[str] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw[: _comment_start(raw)].strip()
        if not line:
            continue
        try:
            ids.append(label_to_class(line))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        texts.append(line)
    if not ids:
        raise DataError(f"{path}: no chord labels found")
    return ids, texts


def save_features(path: str | Path, values: np.ndarray, sample_rate: int = SAMPLE_RATE, hop: int = HOP_LENGTH) -> None:
    """Persist a feature matrix as little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    values = np.ascontiguousarray(np.asarray(values), dtype=FEATURE_DTYPE)
    if values.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {values.shape}")
    atomic_write_bytes(path, values.tobytes())
    meta = {
        "dtype": FEATURE_DTYPE,
        "shape": list(values.shape),
        "sample_rate": sample_rate,
        "hop": hop,
    }
    atomic_write_json(path.with_suffix(path.suffix + ".json"), meta)


def load_features(path: str | Path) -> tuple[np.ndarray, dict]:
    """Load a feature matrix written by :func:`save_features`."""
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".json")
    if not path.exists() or not meta_path.exists():
        raise DataError(f"feature file or sidecar missing for {path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        shape = tuple(int(d) for d in meta["shape"])
        dtype = meta["dtype"]
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"bad feature sidecar {meta_path}: {exc}") from exc
    raw = np.fromfile(path, dtype=np.dtype(dtype))
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise DataError(
            f"feature blob {path} holds {raw.size} values, sidecar promises {expected}"
        )
    return raw.reshape(shape), meta
