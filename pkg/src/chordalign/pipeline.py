"""End-to-end commands shared by the HTTP service and the CLI.

Every function here takes plain paths and options, does the work through
the library modules, writes any artifacts atomically, and returns a JSON
serializable summary.  Feature extraction is cached by audio content hash
under ``$CHORDALIGN_CACHE_DIR`` (or an explicit cache path) so repeated
training runs skip the CQT.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chords, metrics
from .baselines import dtw_align, hcdf_boundaries
from .chords import ChordSegment, frame_labels_from_timed
from .ctc import DEFAULT_BLANK_EPS, forced_align
from .dsp import SAMPLE_RATE, CqtMatrix, FrameGrid, cqt, resample, segment
from .errors import DataError, UsageError
from .fileio import (
    atomic_write_json,
    load_features,
    read_chord_list,
    read_lab,
    read_wav,
    save_features,
    write_lab,
)
from .model import ModelConfig
from .synth import SynthSpec, generate_corpus
from .training import (
    TrainConfig,
    WindowSet,
    apply_overrides,
    emissions_from_cqt,
    load_model,
    save_checkpoint,
    train_model,
)

CACHE_ENV_VAR = "CHORDALIGN_CACHE_DIR"
SPLIT_FRACTIONS = (0.65, 0.20, 0.15)
ALIGNMENT_FORMAT_VERSION = 1


def resolve_cache_dir(explicit: str | None = None) -> Path | None:
    """Explicit path, else $CHORDALIGN_CACHE_DIR, else no caching."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV_VAR, "").strip()
    return Path(env) if env else None


def track_features(wav_path: str | Path, cache_dir: Path | None = None) -> CqtMatrix:
    """CQT features for one file, cached by audio content hash.

    Values are float32 whether computed or loaded, so cached and fresh
    features are bit-identical and downstream results do not depend on
    cache state.
    """
    wav_path = Path(wav_path)
    if cache_dir is not None:
        key = hashlib.sha256(wav_path.read_bytes()).hexdigest()
        blob = cache_dir / f"{key}.f32"
        if blob.exists():
            values, meta = load_features(blob)
            grid = FrameGrid(n_frames=values.shape[1], sample_rate=meta["sample_rate"], hop=meta["hop"])
            return CqtMatrix(values=values, grid=grid)
    features = cqt(resample(read_wav(wav_path), SAMPLE_RATE))
    features.values = features.values.astype(np.float32)
    if cache_dir is not None:
        save_features(blob, features.values, features.grid.sample_rate, features.grid.hop)
    return features


def split_tracks(stems: list[str], seed: int) -> dict[str, list[str]]:
    """Deterministic 65/20/15 train/val/test split over whole tracks."""
    if len(stems) < 3:
        raise DataError(f"need at least 3 tracks to split, got {len(stems)}")
    order = list(np.array(sorted(stems))[np.random.default_rng(seed).permutation(len(stems))])
    n = len(order)
    n_train = max(int(round(SPLIT_FRACTIONS[0] * n)), 1)
    n_val = max(int(round(SPLIT_FRACTIONS[1] * n)), 1)
    n_train = min(n_train, n - 2)
    n_val = min(n_val, n - n_train - 1)
    return {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }


def corpus_stems(data_dir: str | Path) -> list[str]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    stems = sorted(p.stem for p in data_dir.glob("*.wav"))
    if not stems:
        raise DataError(f"no WAV files in {data_dir}")
    missing = [s for s in stems if not (data_dir / f"{s}.lab").exists()]
    if missing:
        raise DataError(f"missing LAB annotations for: {', '.join(missing[:5])}")
    return stems


def _track_windows(
    data_dir: Path, stem: str, cache_dir: Path | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    features = track_features(data_dir / f"{stem}.wav", cache_dir)
    segments = read_lab(data_dir / f"{stem}.lab")
    labels = frame_labels_from_timed(segments, features.grid)
    windows, meta = segment(features.values)
    width = windows.shape[2]
    label_windows = np.full((len(meta), width), chords.NO_CHORD_ID, dtype=np.int64)
    valid = np.empty(len(meta), dtype=np.int64)
    for w, win in enumerate(meta):
        label_windows[w, :win.valid] = labels[win.start:win.stop]
        valid[w] = win.valid
    return windows.astype(np.float32), label_windows, valid


def _window_set(data_dir: Path, stems: list[str], cache_dir: Path | None) -> WindowSet:
    feats, labels, valids = [], [], []
    for stem in stems:
        f, l, v = _track_windows(data_dir, stem, cache_dir)
        feats.append(f)
        labels.append(l)
        valids.append(v)
    return WindowSet(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        valid=np.concatenate(valids),
    )


def run_synth(
    out_dir: str,
    n_tracks: int = 200,
    seed: int = 0,
    duration_range: tuple[float, float] = (12.0, 20.0),
    noise_level: float = 0.0,
    qualities: tuple[str, ...] | None = None,
) -> dict:
    """Generate a synthetic corpus; returns a summary of what was written."""
    spec = SynthSpec(
        n_tracks=n_tracks,
        seed=seed,
        duration_range=duration_range,
        noise_level=noise_level,
        **({"qualities": tuple(qualities)} if qualities else {}),
    )
    manifest = generate_corpus(spec, out_dir)
    total = sum(t["duration"] for t in manifest["tracks"])
    return {
        "out_dir": str(out_dir),
        "n_tracks": len(manifest["tracks"]),
        "total_duration": round(total, 3),
        "manifest": str(Path(out_dir) / "manifest.json"),
    }


def run_train(
    data_dir: str,
    out_path: str,
    preset: str = "toy",
    model_overrides: list[str] | None = None,
    train_overrides: list[str] | None = None,
    cache_dir: str | None = None,
    progress=None,
) -> dict:
    """Split a corpus, train a model, and write a checkpoint with metadata."""
    model_cfg = apply_overrides(ModelConfig.preset(preset), model_overrides or [])
    train_cfg = apply_overrides(TrainConfig(), train_overrides or [])
    data = Path(data_dir)
    cache = resolve_cache_dir(cache_dir)
    stems = corpus_stems(data)
    split = split_tracks(stems, train_cfg.seed)
    train_set = _window_set(data, split["train"], cache)
    val_set = _window_set(data, split["val"], cache)
    result = train_model(train_set, val_set, model_cfg, train_cfg, progress=progress)
    metadata = {
        "data_dir": str(data),
        "split": split,
        "seed": train_cfg.seed,
        "preset": preset,
        "train_config": {f: getattr(train_cfg, f) for f in train_cfg.__dataclass_fields__},
        "best_epoch": result.best_epoch,
        "stop_epoch": result.stop_epoch,
        "best_val_loss": result.best_val_loss,
        "train_losses": result.train_losses,
        "val_losses": result.val_losses,
    }
    save_checkpoint(out_path, result.state_dict, model_cfg, metadata)
    return {
        "checkpoint": str(out_path),
        "best_epoch": result.best_epoch,
        "stop_epoch": result.stop_epoch,
        "best_val_loss": result.best_val_loss,
        "n_train_windows": len(train_set),
        "n_val_windows": len(val_set),
        "split_sizes": {k: len(v) for k, v in split.items()},
    }


def _segments_payload(segments: list[ChordSegment]) -> list[dict]:
    return [
        {
            "onset": round(seg.onset, 6),
            "duration": round(seg.duration, 6),
            "end": round(seg.end, 6),
            "label": seg.label,
            "label_id": seg.label_id,
        }
        for seg in segments
    ]


def run_align(
    audio_path: str,
    chords_path: str,
    checkpoint_path: str,
    out_prefix: str | None = None,
    blank_eps: float = DEFAULT_BLANK_EPS,
    cache_dir: str | None = None,
) -> dict:
    """Force-align an untimed chord list to a recording.

    Writes ``out_prefix.lab`` and ``out_prefix.json`` when a prefix is
    given; always returns the alignment record.
    """
    class_ids, texts = read_chord_list(chords_path)
    model, _ = load_model(checkpoint_path)
    features = track_features(audio_path, resolve_cache_dir(cache_dir))
    emissions = emissions_from_cqt(features, model)
    segments, score = forced_align(emissions, class_ids, blank_eps=blank_eps)
    segments = [replace(seg, label=text) for seg, text in zip(segments, texts)]
    record = {
        "format_version": ALIGNMENT_FORMAT_VERSION,
        "audio": str(audio_path),
        "chords": str(chords_path),
        "checkpoint": str(checkpoint_path),
        "n_frames": emissions.grid.n_frames,
        "frame_period": emissions.grid.frame_period,
        "blank_eps": blank_eps,
        "path_log_prob": score,
        "segments": _segments_payload(segments),
    }
    if out_prefix:
        lab_path, json_path = f"{out_prefix}.lab", f"{out_prefix}.json"
        write_lab(lab_path, segments)
        atomic_write_json(json_path, record)
        record["lab_path"] = lab_path
        record["json_path"] = json_path
    return record


def _track_report(pred: list[ChordSegment], ref: list[ChordSegment], window: float) -> dict:
    score = metrics.boundary_score(
        metrics.change_points(pred), metrics.change_points(ref), window
    )
    report = {
        "boundary": {
            "precision": score.precision,
            "recall": score.recall,
            "f1": score.f1,
            "n_matched": score.n_matched,
            "n_predicted": score.n_predicted,
            "n_reference": score.n_reference,
        },
        "paired": None,
    }
    labels_match = len(pred) == len(ref) and all(
        p.label_id == r.label_id for p, r in zip(pred, ref)
    )
    if labels_match:
        errors = metrics.onset_errors(pred, ref)
        report["paired"] = {
            "median_onset_error": float(np.median(errors)),
            "mean_onset_error": float(np.mean(errors)),
            "percentage_correct": metrics.percentage_correct(pred, ref),
            "perceptual_score": metrics.perceptual_onset_score(errors),
            "onset_errors": [round(float(e), 6) for e in errors],
        }
    return report


def run_eval(
    pred_dir: str,
    ref_dir: str,
    window: float = metrics.DEFAULT_BOUNDARY_WINDOW,
    out_path: str | None = None,
) -> dict:
    """Score predicted LAB files against reference ones, stem by stem.

    Boundary metrics use chord-change points: the track start is not a
    boundary, and a seam between two segments with equal labels is not a
    change.  Index-paired metrics are reported when the predicted chord
    sequence matches the reference exactly, which forced alignment
    guarantees.
    """
    pred_root, ref_root = Path(pred_dir), Path(ref_dir)
    if not pred_root.is_dir():
        raise DataError(f"prediction directory not found: {pred_root}")
    if not ref_root.is_dir():
        raise DataError(f"reference directory not found: {ref_root}")
    stems = sorted(p.stem for p in pred_root.glob("*.lab"))
    if not stems:
        raise DataError(f"no LAB files in {pred_root}")
    missing = [s for s in stems if not (ref_root / f"{s}.lab").exists()]
    if missing:
        raise DataError(f"reference LAB missing for: {', '.join(missing[:5])}")

    tracks = {}
    matched = predicted = reference = 0
    pooled_errors: list[float] = []
    overlap_total = duration_total = 0.0
    for stem in stems:
        pred = read_lab(pred_root / f"{stem}.lab")
        ref = read_lab(ref_root / f"{stem}.lab")
        report = _track_report(pred, ref, window)
        tracks[stem] = report
        matched += report["boundary"]["n_matched"]
        predicted += report["boundary"]["n_predicted"]
        reference += report["boundary"]["n_reference"]
        if report["paired"] is not None:
            pooled_errors.extend(report["paired"]["onset_errors"])
            ref_dur = sum(r.duration for r in ref)
            overlap_total += report["paired"]["percentage_correct"] * ref_dur
            duration_total += ref_dur
    precision = matched / predicted if predicted else 0.0
    recall = matched / reference if reference else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    corpus = {
        "n_tracks": len(stems),
        "boundary": {"precision": precision, "recall": recall, "f1": f1},
        "paired": None,
    }
    if pooled_errors:
        corpus["paired"] = {
            "median_onset_error": float(np.median(pooled_errors)),
            "mean_onset_error": float(np.mean(pooled_errors)),
            "percentage_correct": overlap_total / duration_total,
            "perceptual_score": metrics.perceptual_onset_score(pooled_errors),
            "n_tracks": sum(1 for t in tracks.values() if t["paired"] is not None),
        }
    report = {"window": window, "corpus": corpus, "tracks": tracks}
    if out_path:
        atomic_write_json(out_path, report)
        report["report_path"] = str(out_path)
    return report


def run_baseline(
    method: str,
    audio_path: str,
    ref_path: str | None = None,
    out_prefix: str | None = None,
    window: float = metrics.DEFAULT_BOUNDARY_WINDOW,
) -> dict:
    """Run one baseline on one track.

    ``hcdf`` detects boundary candidates (scored against the reference when
    given); ``dtw`` warps the reference LAB timings onto the audio and
    writes an aligned LAB.
    """
    audio = read_wav(audio_path)
    if method == "hcdf":
        boundaries = [float(b) for b in hcdf_boundaries(audio)]
        result = {"method": "hcdf", "audio": str(audio_path), "boundaries": boundaries}
        if ref_path:
            ref = read_lab(ref_path)
            score = metrics.boundary_score(boundaries, metrics.change_points(ref), window)
            result["boundary"] = {
                "precision": score.precision,
                "recall": score.recall,
                "f1": score.f1,
            }
        if out_prefix:
            atomic_write_json(f"{out_prefix}.json", result)
            result["json_path"] = f"{out_prefix}.json"
        return result
    if method == "dtw":
        if not ref_path:
            raise UsageError(
                "the dtw baseline needs --ref: DTW warps a weak alignment "
                "(approximate prior timings) onto the audio and cannot start "
                "from an untimed chord list"
            )
        reference = read_lab(ref_path)
        aligned = dtw_align(audio, reference)
        result = {
            "method": "dtw",
            "audio": str(audio_path),
            "reference": str(ref_path),
            "segments": _segments_payload(aligned),
        }
        if out_prefix:
            write_lab(f"{out_prefix}.lab", aligned)
            atomic_write_json(f"{out_prefix}.json", result)
            result["lab_path"] = f"{out_prefix}.lab"
            result["json_path"] = f"{out_prefix}.json"
        return result
    raise UsageError(f"unknown baseline method {method!r}; choose hcdf or dtw")


def run_features(audio_path: str, out_path: str) -> dict:
    """Extract and persist CQT features for one file."""
    features = cqt(resample(read_wav(audio_path), SAMPLE_RATE))
    save_features(out_path, features.values, features.grid.sample_rate, features.grid.hop)
    return {
        "audio": str(audio_path),
        "out": str(out_path),
        "shape": list(features.values.shape),
        "frame_period": features.grid.frame_period,
    }
