"""Audio front end: resampling, constant-Q spectrogram, chroma, windowing.

All analysis runs at 22050 Hz with a 2048-sample hop.  The constant-Q
transform spans 6 octaves from C1 (32.7032 Hz) at 24 bins per octave,
144 bins total, computed with FFT-domain banded kernels so a full track
costs a handful of batched FFTs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import DataError, UsageError

SAMPLE_RATE = 22050
HOP_LENGTH = 2048
BINS_PER_OCTAVE = 24
N_BINS = 144
FMIN_HZ = 32.7032  # C1
WINDOW_SECONDS = 15.0
OVERLAP_SECONDS = 3.0
_MAX_KERNEL = 16384  # cap on kernel length = FFT size; only the lowest bins hit it


@dataclass(frozen=True)
class FrameGrid:
    """Mapping between frame indices and seconds for a fixed hop."""

    n_frames: int
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP_LENGTH

    def __post_init__(self):
        if self.n_frames <= 0:
            raise DataError("frame grid needs at least one frame")

    @property
    def frame_period(self) -> float:
        return self.hop / self.sample_rate

    @property
    def duration(self) -> float:
        return self.n_frames * self.frame_period

    def frame_time(self, index: int) -> float:
        return index * self.hop / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_period

    @classmethod
    def for_samples(cls, n_samples: int, sample_rate: int = SAMPLE_RATE, hop: int = HOP_LENGTH) -> "FrameGrid":
        if n_samples <= 0:
            raise DataError("cannot build a frame grid for empty audio")
        return cls(n_frames=n_samples // hop + 1, sample_rate=sample_rate, hop=hop)


@dataclass
class AudioBuffer:
    """Mono audio samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"expected mono audio, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise DataError("audio buffer is empty")
        if self.sample_rate <= 0:
            raise DataError(f"bad sample rate {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def grid(self, hop: int = HOP_LENGTH) -> FrameGrid:
        return FrameGrid.for_samples(self.samples.size, self.sample_rate, hop)


def resample(audio: AudioBuffer, target_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Polyphase resampling to ``target_rate``.

    Output length is round(n * target / source) exactly, trimming or
    zero-padding the filter tail as needed.
    """
    if target_rate <= 0:
        raise UsageError(f"bad target sample rate {target_rate}")
    if audio.sample_rate == target_rate:
        return audio
    g = math.gcd(audio.sample_rate, target_rate)
    up, down = target_rate // g, audio.sample_rate // g
    out = sps.resample_poly(audio.samples, up, down)
    want = int(round(audio.samples.size * target_rate / audio.sample_rate))
    want = max(want, 1)
    if out.size < want:
        out = np.pad(out, (0, want - out.size))
    return AudioBuffer(samples=out[:want], sample_rate=target_rate)


@dataclass
class CqtMatrix:
    """Constant-Q magnitudes, shape (n_bins, n_frames), plus the frame grid."""

    values: np.ndarray
    grid: FrameGrid
    log_compressed: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != N_BINS:
            raise DataError(f"expected ({N_BINS}, T) matrix, got {self.values.shape}")
        if self.values.shape[1] != self.grid.n_frames:
            raise DataError("CQT frame count disagrees with its grid")


def cqt_bin_frequencies() -> np.ndarray:
    """Center frequency of each of the 144 bins, in Hz."""
    return FMIN_HZ * 2.0 ** (np.arange(N_BINS) / BINS_PER_OCTAVE)


class _CqtKernels:
    """FFT-domain banded analysis kernels, built once per process."""

    def __init__(self):
        q = 1.0 / (2.0 ** (1.0 / BINS_PER_OCTAVE) - 1.0)
        freqs = cqt_bin_frequencies()
        self.n_fft = _MAX_KERNEL
        n_rbins = self.n_fft // 2 + 1
        self.bands: list[tuple[int, np.ndarray]] = []
        for f in freqs:
            length = min(int(round(q * SAMPLE_RATE / f)), _MAX_KERNEL)
            window = np.hanning(length)
            n = np.arange(length)
            # Center the kernel in the FFT buffer so frame index i analyzes
            # a window centered on sample i * hop.
            kernel = np.zeros(self.n_fft, dtype=np.complex128)
            phase = 2j * np.pi * f * (n - (length - 1) / 2) / SAMPLE_RATE
            tap = window * np.exp(phase) * (2.0 / window.sum())
            start = (self.n_fft - length) // 2
            kernel[start:start + length] = tap
            # The analytic kernel lives on positive frequencies, so only the
            # rfft half of the frame spectrum is needed for the dot product.
            spec = np.fft.fft(kernel)[:n_rbins]
            mag = np.abs(spec)
            keep = mag >= 1e-4 * mag.max()
            lo = int(np.argmax(keep))
            hi = int(n_rbins - np.argmax(keep[::-1]))
            self.bands.append((lo, np.conj(spec[lo:hi]).astype(np.complex64)))


_KERNELS: _CqtKernels | None = None


def _kernels() -> _CqtKernels:
    global _KERNELS
    if _KERNELS is None:
        _KERNELS = _CqtKernels()
    return _KERNELS


def cqt(audio: AudioBuffer, compress: bool = True) -> CqtMatrix:
    """Constant-Q magnitude spectrogram of ``audio``.

    The input must already be at 22050 Hz (call :func:`resample` first).
    Frames are centered via reflect padding; with compression on, values
    are log(1 + 100 * magnitude).
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise DataError(f"cqt expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate}")
    ker = _kernels()
    grid = audio.grid()
    n_fft = ker.n_fft
    half = n_fft // 2
    x = audio.samples
    if x.size >= 2:
        padded = np.pad(x, (half, half + HOP_LENGTH), mode="reflect")
    else:
        padded = np.pad(x, (half, half + HOP_LENGTH))
    out = np.empty((N_BINS, grid.n_frames), dtype=np.float64)
    chunk = 64
    for c0 in range(0, grid.n_frames, chunk):
        c1 = min(c0 + chunk, grid.n_frames)
        idx = np.arange(c0, c1) * HOP_LENGTH
        frames = np.stack([padded[i:i + n_fft] for i in idx])
        spec = np.fft.rfft(frames, axis=1)
        for k, (lo, band) in enumerate(ker.bands):
            coeff = spec[:, lo:lo + band.size] @ band
            out[k, c0:c1] = np.abs(coeff) / n_fft
    if compress:
        out = np.log1p(100.0 * out)
    return CqtMatrix(values=out, grid=grid, log_compressed=compress)


def chroma(cqt_matrix: CqtMatrix) -> np.ndarray:
    """Fold CQT bins into 12 pitch classes, shape (12, n_frames).

    Bin 0 is C, so pitch class = (bin // 2) mod 12 at 24 bins/octave.
    """
    values = cqt_matrix.values
    pcs = (np.arange(N_BINS) // 2) % 12
    out = np.zeros((12, values.shape[1]), dtype=values.dtype)
    np.add.at(out, pcs, values)
    return out


def frames_per_window(seconds: float = WINDOW_SECONDS) -> int:
    """Frame count of an analysis window covering ``seconds`` of audio."""
    return int(seconds * SAMPLE_RATE) // HOP_LENGTH + 1


WINDOW_FRAMES = frames_per_window(WINDOW_SECONDS)  # 162
OVERLAP_FRAMES = int(OVERLAP_SECONDS * SAMPLE_RATE) // HOP_LENGTH  # 32
STRIDE_FRAMES = WINDOW_FRAMES - OVERLAP_FRAMES  # 130


@dataclass(frozen=True)
class Window:
    """One model-input window cut from a track's feature matrix."""

    start: int
    valid: int  # leading frames that carry real data; the rest is padding

    @property
    def stop(self) -> int:
        return self.start + self.valid


def window_starts(n_frames: int, window: int = WINDOW_FRAMES, stride: int = STRIDE_FRAMES) -> list[int]:
    """Window start frames for a track of ``n_frames``.

    A track that fits in one window yields exactly one (possibly padded)
    window; otherwise starts advance by ``stride`` while they fall inside
    the track, so the final window is padded rather than dropped.
    """
    if n_frames <= 0:
        raise DataError("cannot window an empty track")
    if window <= 0 or stride <= 0:
        raise UsageError("window and stride must be positive")
    if n_frames <= window:
        return [0]
    return list(range(0, n_frames, stride))


def segment(values: np.ndarray, window: int = WINDOW_FRAMES, stride: int = STRIDE_FRAMES) -> tuple[np.ndarray, list[Window]]:
    """Cut a (D, T) feature matrix into fixed-size windows.

    Returns a (n_windows, D, window) array, zero-padded past the track end,
    plus the per-window start and valid-frame bookkeeping.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataError(f"expected a (D, T) matrix, got shape {values.shape}")
    n_frames = values.shape[1]
    starts = window_starts(n_frames, window, stride)
    out = np.zeros((len(starts), values.shape[0], window), dtype=values.dtype)
    meta = []
    for w, s in enumerate(starts):
        valid = min(window, n_frames - s)
        out[w, :, :valid] = values[:, s:s + valid]
        meta.append(Window(start=s, valid=valid))
    return out, meta


@dataclass(frozen=True)
class AugmentPolicy:
    """Masking-based augmentation settings (frequency and time masks)."""

    max_freq_bins: int = 24
    max_time_frames: int = 20
    masks_per_axis: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.max_freq_bins < 0 or self.max_time_frames < 0 or self.masks_per_axis < 0:
            raise UsageError("augmentation sizes must be non-negative")


def augment(window: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator | None = None) -> np.ndarray:
    """Randomly mask frequency bands and/or time spans of one window.

    Picks frequency-only, time-only, or both with equal probability, then
    draws ``masks_per_axis`` masks per chosen axis.  Masked cells are filled
    with the window mean.  The input is never modified.
    """
    window = np.asarray(window)
    if window.ndim != 2:
        raise DataError(f"expected a (D, T) window, got shape {window.shape}")
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    out = window.copy()
    fill = float(window.mean())
    mode = int(rng.integers(3))  # 0: freq, 1: time, 2: both
    if mode in (0, 2):
        limit = min(policy.max_freq_bins, window.shape[0])
        for _ in range(policy.masks_per_axis):
            width = int(rng.integers(0, limit + 1))
            start = int(rng.integers(0, window.shape[0] - width + 1))
            out[start:start + width, :] = fill
    if mode in (1, 2):
        limit = min(policy.max_time_frames, window.shape[1])
        for _ in range(policy.masks_per_axis):
            width = int(rng.integers(0, limit + 1))
            start = int(rng.integers(0, window.shape[1] - width + 1))
            out[:, start:start + width] = fill
    return out
