"""Training loop, checkpoint format, and whole-track emission prediction.

Training is plain frame-wise cross entropy on fixed-size windows with
optional masking augmentation, AdamW, cosine-annealed warm restarts, and
early stopping on validation loss.  Everything is seeded so two runs with
the same config produce byte-identical checkpoints.

Checkpoints are a JSON manifest (config, tensor table, metadata) next to a
raw little-endian float32 blob, so they can be inspected and loaded
without pickle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import chords
from .ctc import EmissionMatrix
from .dsp import (
    SAMPLE_RATE,
    AudioBuffer,
    AugmentPolicy,
    CqtMatrix,
    augment,
    cqt,
    resample,
    segment,
)
from .errors import DataError, NumericError, UsageError
from .fileio import atomic_write_bytes, atomic_write_json
from .model import ChordNet, ModelConfig

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 20
    restart_period: int = 10
    restart_mult: int = 2
    seed: int = 0
    augment: bool = True
    max_freq_bins: int = 24
    max_time_frames: int = 20
    masks_per_axis: int = 2
    aux_root: float = 0.0
    aux_bass: float = 0.0
    aux_pitch: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise UsageError("lr, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise UsageError("patience must be at least 1")
        if self.restart_period < 1 or self.restart_mult < 1:
            raise UsageError("scheduler restart settings must be positive")
        if min(self.aux_root, self.aux_bass, self.aux_pitch) < 0:
            raise UsageError("auxiliary loss weights must be non-negative")


def apply_overrides(config, pairs: Sequence[str]):
    """Apply CLI ``key=value`` overrides to a (frozen) config dataclass."""
    updates = {}
    known = {f.name: f for f in fields(config)}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in known:
            raise UsageError(f"unknown config key {key!r}; valid keys: {sorted(known)}")
        ftype = known[key].type
        try:
            if ftype in ("bool", bool):
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError("expected true/false")
                updates[key] = value.lower() in ("true", "1")
            elif ftype in ("int", int):
                updates[key] = int(value)
            elif ftype in ("float", float):
                updates[key] = float(value)
            else:
                updates[key] = value
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc
    return replace(config, **updates)


@dataclass
class WindowSet:
    """Fixed-size training windows with frame labels and padding bookkeeping."""

    features: np.ndarray  # (N, n_bins, W) float32
    labels: np.ndarray  # (N, W) int64
    valid: np.ndarray  # (N,) leading valid frame counts

    def __post_init__(self):
        if self.features.ndim != 3:
            raise DataError(f"expected (N, D, W) features, got {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n, self.features.shape[2]) or self.valid.shape != (n,):
            raise DataError("window features, labels and valid counts disagree")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class TrainResult:
    state_dict: dict
    model_config: ModelConfig
    train_config: TrainConfig
    best_epoch: int
    stop_epoch: int
    best_val_loss: float
    train_losses: list[float]
    val_losses: list[float]


def _target_tables() -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    roots = np.empty(chords.N_CLASSES, dtype=np.int64)
    basses = np.empty(chords.N_CLASSES, dtype=np.int64)
    pitches = np.empty((chords.N_CLASSES, 12), dtype=np.float32)
    for cid in range(chords.N_CLASSES):
        r, b, p = chords.structured_targets(cid)
        roots[cid], basses[cid], pitches[cid] = r, b, p
    return torch.from_numpy(roots), torch.from_numpy(basses), torch.from_numpy(pitches)


def _frame_mask(valid: torch.Tensor, width: int) -> torch.Tensor:
    return torch.arange(width).unsqueeze(0) < valid.unsqueeze(1)


def _batch_loss(
    outputs: dict[str, torch.Tensor],
    labels: torch.Tensor,
    mask: torch.Tensor,
    cfg: TrainConfig,
    tables: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
) -> torch.Tensor:
    flat_mask = mask.reshape(-1)
    flat_labels = labels.reshape(-1)[flat_mask]
    log_probs = outputs["chord_logprobs"].reshape(-1, outputs["chord_logprobs"].shape[-1])
    loss = torch.nn.functional.nll_loss(log_probs[flat_mask], flat_labels)
    roots, basses, pitches = tables
    if cfg.aux_root > 0:
        logits = outputs["root_logits"].reshape(-1, outputs["root_logits"].shape[-1])
        loss = loss + cfg.aux_root * torch.nn.functional.cross_entropy(
            logits[flat_mask], roots[flat_labels]
        )
    if cfg.aux_bass > 0:
        logits = outputs["bass_logits"].reshape(-1, outputs["bass_logits"].shape[-1])
        loss = loss + cfg.aux_bass * torch.nn.functional.cross_entropy(
            logits[flat_mask], basses[flat_labels]
        )
    if cfg.aux_pitch > 0:
        logits = outputs["pitch_logits"].reshape(-1, outputs["pitch_logits"].shape[-1])
        loss = loss + cfg.aux_pitch * torch.nn.functional.binary_cross_entropy_with_logits(
            logits[flat_mask], pitches[flat_labels]
        )
    return loss


def _epoch_loss(
    model: ChordNet,
    data: WindowSet,
    cfg: TrainConfig,
    tables,
) -> float:
    """Masked validation loss over a window set, in eval mode."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for b0 in range(0, len(data), cfg.batch_size):
            b1 = min(b0 + cfg.batch_size, len(data))
            feats = torch.from_numpy(data.features[b0:b1])
            labels = torch.from_numpy(data.labels[b0:b1])
            valid = torch.from_numpy(data.valid[b0:b1])
            mask = _frame_mask(valid, labels.shape[1])
            loss = _batch_loss(model(feats), labels, mask, cfg, tables)
            n = int(mask.sum())
            total += float(loss) * n
            count += n
    if count == 0:
        raise DataError("validation set has no valid frames")
    return total / count


def train_model(
    train_set: WindowSet,
    val_set: WindowSet,
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train a frame classifier until validation loss stops improving.

    Stops after ``patience`` epochs without a new best validation loss, or
    at ``max_epochs``.  Fully deterministic for a fixed seed: weight init,
    shuffling and augmentation all derive from ``train_config.seed``.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    cfg = train_config
    torch.manual_seed(cfg.seed)
    model = ChordNet(model_config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        optimizer, T_0=cfg.restart_period, T_mult=cfg.restart_mult
    )
    tables = _target_tables()
    policy = AugmentPolicy(
        max_freq_bins=cfg.max_freq_bins,
        max_time_frames=cfg.max_time_frames,
        masks_per_axis=cfg.masks_per_axis,
        seed=cfg.seed,
    )
    width = train_set.features.shape[2]

    best_state: dict = {}
    best_val = math.inf
    best_epoch = 0
    train_losses: list[float] = []
    val_losses: list[float] = []
    stop_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        total, count = 0.0, 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            feats = train_set.features[idx]
            if cfg.augment:
                feats = np.stack(
                    [
                        augment(w, policy, np.random.default_rng([cfg.seed, epoch, int(i)]))
                        for w, i in zip(feats, idx)
                    ]
                ).astype(np.float32)
            labels = torch.from_numpy(train_set.labels[idx])
            valid = torch.from_numpy(train_set.valid[idx])
            mask = _frame_mask(valid, width)
            optimizer.zero_grad()
            loss = _batch_loss(model(torch.from_numpy(feats)), labels, mask, cfg, tables)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                )
            loss.backward()
            optimizer.step()
            n = int(mask.sum())
            total += float(loss.detach()) * n
            count += n
        scheduler.step()
        train_loss = total / max(count, 1)
        val_loss = _epoch_loss(model, val_set, cfg, tables)
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        stop_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if progress is not None:
            progress(
                {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "val_loss": val_loss,
                    "best_epoch": best_epoch,
                }
            )
        if epoch - best_epoch >= cfg.patience:
            break
    return TrainResult(
        state_dict=best_state,
        model_config=model_config,
        train_config=cfg,
        best_epoch=best_epoch,
        stop_epoch=stop_epoch,
        best_val_loss=best_val,
        train_losses=train_losses,
        val_losses=val_losses,
    )


def _blob_path(path: Path) -> Path:
    return path.with_name(path.name + ".bin")


def save_checkpoint(
    path: str | Path,
    state_dict: dict,
    model_config: ModelConfig,
    metadata: dict | None = None,
) -> None:
    """Write a JSON manifest at ``path`` and the weights at ``path + '.bin'``.

    Every tensor is stored as little-endian float32 in manifest order;
    integer buffers (batch-norm step counters) are cast to float32 and
    restored to their recorded dtype on load.
    """
    path = Path(path)
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu()
        array = tensor.to(torch.float32).numpy().astype("<f4")
        tensors.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": str(tensor.dtype).replace("torch.", ""),
                "offset": offset,
                "numel": int(array.size),
            }
        )
        blobs.append(array.tobytes())
        offset += array.size * 4
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model_config.to_dict(),
        "tensors": tensors,
        "metadata": metadata or {},
    }
    atomic_write_bytes(_blob_path(path), b"".join(blobs))
    atomic_write_json(path, manifest)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict, dict]:
    """Load (model_config, state_dict, metadata) from a manifest path."""
    path = Path(path)
    blob_path = _blob_path(path)
    if not path.exists():
        raise DataError(f"checkpoint manifest not found: {path}")
    if not blob_path.exists():
        raise DataError(f"checkpoint weight blob not found: {blob_path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(f"checkpoint manifest {path} is not valid JSON: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"unsupported checkpoint version {manifest.get('format_version')!r} in {path}"
        )
    config = ModelConfig.from_dict(manifest.get("model_config", {}))
    raw = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    state = {}
    for entry in manifest.get("tensors", []):
        try:
            name, shape = entry["name"], tuple(entry["shape"])
            offset, numel = int(entry["offset"]), int(entry["numel"])
            dtype = getattr(torch, entry["dtype"])
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"bad tensor entry in {path}: {exc}") from exc
        if offset % 4 != 0 or offset // 4 + numel > raw.size:
            raise DataError(f"tensor {name!r} overruns the weight blob in {blob_path}")
        values = raw[offset // 4:offset // 4 + numel].reshape(shape).copy()
        state[name] = torch.from_numpy(values).to(dtype)
    return config, state, manifest.get("metadata", {})


def load_model(path: str | Path) -> tuple[ChordNet, dict]:
    """Instantiate a model from a checkpoint, in eval mode."""
    config, state, metadata = load_checkpoint(path)
    model = ChordNet(config)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise DataError(f"checkpoint {path} does not match its declared config: {exc}") from exc
    model.eval()
    return model, metadata


def predict_emissions(audio: AudioBuffer, model: ChordNet, batch_size: int = 8) -> EmissionMatrix:
    """Frame-class probabilities for a whole track.

    The track's CQT is cut into model windows, each window is classified,
    and overlapping frame probabilities are averaged (padding excluded)
    then renormalized, giving one distribution per frame.
    """
    audio = resample(audio, SAMPLE_RATE)
    features = cqt(audio)
    return emissions_from_cqt(features, model, batch_size=batch_size)


def emissions_from_cqt(features: CqtMatrix, model: ChordNet, batch_size: int = 8) -> EmissionMatrix:
    windows, meta = segment(features.values)
    n_frames = features.grid.n_frames
    n_classes = model.config.n_classes
    prob_sum = np.zeros((n_frames, n_classes))
    hits = np.zeros(n_frames)
    model.eval()
    with torch.no_grad():
        for b0 in range(0, windows.shape[0], batch_size):
            b1 = min(b0 + batch_size, windows.shape[0])
            batch = torch.from_numpy(windows[b0:b1].astype(np.float32))
            probs = torch.exp(model(batch)["chord_logprobs"]).numpy()
            for row, win in enumerate(meta[b0:b1]):
                prob_sum[win.start:win.stop] += probs[row, :win.valid]
                hits[win.start:win.stop] += 1
    if np.any(hits == 0):
        raise NumericError("some frames were not covered by any analysis window")
    avg = prob_sum / hits[:, None]
    avg /= avg.sum(axis=1, keepdims=True)
    return EmissionMatrix(log_probs=np.log(avg), grid=features.grid)
