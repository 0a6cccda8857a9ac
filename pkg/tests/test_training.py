"""Training loop determinism, checkpoint format, emission stitching."""
import json
import math

import numpy as np
import pytest
import torch

from chordalign.dsp import SAMPLE_RATE, AudioBuffer, CqtMatrix, FrameGrid, cqt, segment
from chordalign.errors import DataError, NumericError, UsageError
from chordalign.model import ChordNet, ModelConfig
from chordalign.training import (
    TrainConfig,
    WindowSet,
    apply_overrides,
    emissions_from_cqt,
    load_checkpoint,
    load_model,
    predict_emissions,
    save_checkpoint,
    train_model,
    _batch_loss,
    _target_tables,
)

TINY = ModelConfig(n_layers=1, model_dim=8, n_heads=2, conv_kernel=3,
                   dropout=0.0, fusion_dim=8, n_bins=12, n_classes=3)


def separable_windows(n_windows: int = 12, width: int = 8, seed: int = 0,
                      random_labels: bool = False) -> WindowSet:
    """Each class lights up its own bin triple, trivially learnable."""
    rng = np.random.default_rng(seed)
    feats = rng.normal(0.0, 0.05, size=(n_windows, 12, width)).astype(np.float32)
    labels = np.zeros((n_windows, width), dtype=np.int64)
    for i in range(n_windows):
        cls = i % 3
        feats[i, cls * 3:(cls + 1) * 3, :] += 1.0
        labels[i] = cls
    if random_labels:
        labels = rng.integers(0, 3, size=labels.shape)
    return WindowSet(features=feats, labels=labels,
                     valid=np.full(n_windows, width, dtype=np.int64))


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lr": 0.0},
            {"batch_size": 0},
            {"max_epochs": 0},
            {"patience": 0},
            {"restart_period": 0},
            {"restart_mult": 0},
            {"aux_root": -0.5},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(UsageError):
            TrainConfig(**kwargs)


class TestApplyOverrides:
    def test_typed_values(self):
        cfg = apply_overrides(TrainConfig(), ["lr=0.01", "batch_size=4", "augment=false"])
        assert cfg.lr == 0.01
        assert cfg.batch_size == 4
        assert cfg.augment is False

    def test_bool_spellings(self):
        assert apply_overrides(TrainConfig(), ["augment=1"]).augment is True
        assert apply_overrides(TrainConfig(), ["augment=0"]).augment is False

    def test_works_on_model_config(self):
        cfg = apply_overrides(ModelConfig.preset("toy"), ["n_layers=3"])
        assert cfg.n_layers == 3

    def test_unknown_key(self):
        with pytest.raises(UsageError):
            apply_overrides(TrainConfig(), ["bogus=1"])

    def test_missing_equals(self):
        with pytest.raises(UsageError):
            apply_overrides(TrainConfig(), ["lr"])

    def test_bad_value(self):
        with pytest.raises(UsageError):
            apply_overrides(TrainConfig(), ["lr=fast"])
        with pytest.raises(UsageError):
            apply_overrides(TrainConfig(), ["augment=maybe"])


class TestWindowSet:
    def test_shape_checks(self):
        with pytest.raises(DataError):
            WindowSet(features=np.zeros((2, 12)), labels=np.zeros((2, 8)),
                      valid=np.full(2, 8))
        with pytest.raises(DataError):
            WindowSet(features=np.zeros((2, 12, 8)), labels=np.zeros((2, 7)),
                      valid=np.full(2, 8))
        with pytest.raises(DataError):
            WindowSet(features=np.zeros((2, 12, 8)), labels=np.zeros((2, 8)),
                      valid=np.full(3, 8))

    def test_len(self):
        data = separable_windows(n_windows=5)
        assert len(data) == 5


class TestTrainModel:
    def test_loss_decreases_on_separable_set(self):
        data = separable_windows()
        cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=5, patience=5,
                          seed=0, augment=False)
        result = train_model(data, data, TINY, cfg)
        losses = result.train_losses
        assert len(losses) == 5
        # Strictly decreasing, allowing at most one non-decreasing step.
        violations = sum(1 for a, b in zip(losses, losses[1:]) if b >= a)
        assert violations <= 1
        assert losses[-1] < losses[0]

    def test_trains_to_high_accuracy(self):
        # Linearly separable windows: the tiny model should fit them nearly
        # perfectly on its own training data.
        data = separable_windows()
        cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=40, patience=40,
                          seed=0, augment=False)
        result = train_model(data, data, TINY, cfg)
        model = ChordNet(TINY)
        model.load_state_dict(result.state_dict)
        model.eval()
        with torch.no_grad():
            pred = model(torch.from_numpy(data.features))["chord_logprobs"].argmax(-1)
        accuracy = (pred.numpy() == data.labels).mean()
        assert accuracy > 0.95

    def test_patience_stop(self):
        # Unlearnable validation labels: the best epoch comes early and the
        # run must stop exactly patience epochs later.
        train = separable_windows(seed=1)
        val = separable_windows(seed=2, random_labels=True)
        cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=60, patience=3,
                          seed=0, augment=False)
        result = train_model(train, val, TINY, cfg)
        assert result.stop_epoch < cfg.max_epochs
        assert result.stop_epoch == result.best_epoch + cfg.patience

    def test_two_runs_byte_identical(self, tmp_path):
        data = separable_windows()
        cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=3, patience=3,
                          seed=7, augment=True)
        paths = []
        for run in ("a", "b"):
            result = train_model(data, data, TINY, cfg)
            out = tmp_path / f"{run}.ckpt"
            save_checkpoint(out, result.state_dict, TINY,
                            metadata={"val_losses": result.val_losses})
            paths.append(out)
        assert paths[0].read_bytes() == paths[1].read_bytes()
        blob = paths[0].with_name(paths[0].name + ".bin")
        other = paths[1].with_name(paths[1].name + ".bin")
        assert blob.read_bytes() == other.read_bytes()

    def test_empty_dataset(self):
        data = separable_windows(n_windows=2)
        empty = WindowSet(features=np.zeros((0, 12, 8), dtype=np.float32),
                          labels=np.zeros((0, 8), dtype=np.int64),
                          valid=np.zeros(0, dtype=np.int64))
        with pytest.raises(DataError):
            train_model(empty, data, TINY)
        with pytest.raises(DataError):
            train_model(data, empty, TINY)

    def test_diverging_loss_aborts(self):
        data = separable_windows()
        cfg = TrainConfig(lr=1e30, batch_size=4, max_epochs=10, patience=10,
                          seed=0, augment=False)
        with pytest.raises(NumericError):
            train_model(data, data, TINY, cfg)


class TestLossFunction:
    def test_logit_shift_invariance(self):
        # Adding a constant to every logit of a frame cannot change the
        # cross entropy (softmax shift invariance).
        torch.manual_seed(3)
        logits = torch.randn(1, 6, 169)
        labels = torch.randint(0, 169, (1, 6))
        mask = torch.ones(1, 6, dtype=torch.bool)
        cfg = TrainConfig(aux_root=1.0, aux_bass=1.0)
        tables = _target_tables()

        def loss_of(z):
            outputs = {
                "chord_logprobs": torch.log_softmax(z, dim=-1),
                "root_logits": torch.randn(1, 6, 13, generator=torch.Generator().manual_seed(5)),
                "bass_logits": torch.randn(1, 6, 13, generator=torch.Generator().manual_seed(6)),
                "pitch_logits": torch.zeros(1, 6, 12),
            }
            return float(_batch_loss(outputs, labels, mask, cfg, tables))

        assert loss_of(logits) == pytest.approx(loss_of(logits + 3.7), abs=1e-6)

    def test_aux_weights_add_loss(self):
        torch.manual_seed(4)
        outputs = {
            "chord_logprobs": torch.log_softmax(torch.randn(1, 4, 169), dim=-1),
            "root_logits": torch.randn(1, 4, 13),
            "bass_logits": torch.randn(1, 4, 13),
            "pitch_logits": torch.randn(1, 4, 12),
        }
        labels = torch.randint(0, 168, (1, 4))
        mask = torch.ones(1, 4, dtype=torch.bool)
        tables = _target_tables()
        bare = float(_batch_loss(outputs, labels, mask, TrainConfig(), tables))
        full = float(_batch_loss(outputs, labels, mask,
                                 TrainConfig(aux_root=1.0, aux_bass=1.0, aux_pitch=1.0),
                                 tables))
        assert full > bare


class TestCheckpoint:
    def make(self, tmp_path):
        torch.manual_seed(0)
        model = ChordNet(TINY)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model.state_dict(), TINY, metadata={"note": "unit"})
        return model, path

    def test_round_trip(self, tmp_path):
        model, path = self.make(tmp_path)
        config, state, metadata = load_checkpoint(path)
        assert config == TINY
        assert metadata == {"note": "unit"}
        for name, tensor in model.state_dict().items():
            assert torch.equal(state[name], tensor.to(state[name].dtype))

    def test_integer_buffers_keep_dtype(self, tmp_path):
        model, path = self.make(tmp_path)
        _, state, _ = load_checkpoint(path)
        counters = [k for k in state if k.endswith("num_batches_tracked")]
        assert counters
        assert all(state[k].dtype == torch.int64 for k in counters)

    def test_loaded_model_matches(self, tmp_path):
        model, path = self.make(tmp_path)
        loaded, _ = load_model(path)
        model.eval()
        x = torch.randn(1, 12, 5)
        with torch.no_grad():
            assert torch.allclose(model(x)["chord_logprobs"],
                                  loaded(x)["chord_logprobs"], atol=1e-6)

    def test_missing_files(self, tmp_path):
        model, path = self.make(tmp_path)
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "absent.ckpt")
        path.with_name(path.name + ".bin").unlink()
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_corrupt_manifest(self, tmp_path):
        model, path = self.make(tmp_path)
        path.write_text("not json", encoding="utf-8")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_wrong_version(self, tmp_path):
        model, path = self.make(tmp_path)
        manifest = json.loads(path.read_text(encoding="utf-8"))
        manifest["format_version"] = 99
        path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_blob_overrun(self, tmp_path):
        model, path = self.make(tmp_path)
        manifest = json.loads(path.read_text(encoding="utf-8"))
        manifest["tensors"][-1]["numel"] += 1000
        path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_state_config_mismatch(self, tmp_path):
        model, path = self.make(tmp_path)
        manifest = json.loads(path.read_text(encoding="utf-8"))
        del manifest["tensors"][0]
        path.write_text(json.dumps(manifest), encoding="utf-8")
        with pytest.raises(DataError):
            load_model(path)


def full_bins_model() -> ChordNet:
    torch.manual_seed(1)
    cfg = ModelConfig(n_layers=1, model_dim=8, n_heads=2, conv_kernel=3,
                      dropout=0.0, fusion_dim=8)
    model = ChordNet(cfg)
    model.eval()
    return model


class TestEmissions:
    def test_single_window_no_averaging(self):
        # 15 s is exactly one analysis window: stitching must reproduce a
        # plain forward pass.
        rng = np.random.default_rng(0)
        audio = AudioBuffer(rng.normal(0, 0.1, size=int(15 * SAMPLE_RATE)), SAMPLE_RATE)
        features = cqt(audio)
        model = full_bins_model()
        emissions = emissions_from_cqt(features, model)
        windows, meta = segment(features.values)
        assert len(meta) == 1
        with torch.no_grad():
            probs = torch.exp(model(torch.from_numpy(windows.astype(np.float32)))
                              ["chord_logprobs"])[0, :meta[0].valid].numpy()
        probs /= probs.sum(axis=1, keepdims=True)
        assert np.allclose(np.exp(emissions.log_probs), probs, atol=1e-9)

    def test_overlap_averaging_oracle(self):
        # 27 s spans two windows; overlapping frames must be the mean of
        # the two per-window probabilities, renormalized.
        rng = np.random.default_rng(1)
        audio = AudioBuffer(rng.normal(0, 0.1, size=int(27 * SAMPLE_RATE)), SAMPLE_RATE)
        features = cqt(audio)
        model = full_bins_model()
        emissions = emissions_from_cqt(features, model)
        windows, meta = segment(features.values)
        n_frames = features.grid.n_frames
        prob_sum = np.zeros((n_frames, 169))
        hits = np.zeros(n_frames)
        with torch.no_grad():
            probs = torch.exp(model(torch.from_numpy(windows.astype(np.float32)))
                              ["chord_logprobs"]).numpy()
        for row, win in enumerate(meta):
            prob_sum[win.start:win.stop] += probs[row, :win.valid]
            hits[win.start:win.stop] += 1
        # Frames between 12 s and 15 s sit in both of the first two windows.
        times = features.grid.times()
        assert np.all(hits[(times >= 12.1) & (times < 15.0)] == 2)
        expected = prob_sum / hits[:, None]
        expected /= expected.sum(axis=1, keepdims=True)
        assert np.allclose(np.exp(emissions.log_probs), expected, atol=1e-9)

    def test_rows_sum_to_one_and_full_grid(self):
        rng = np.random.default_rng(2)
        audio = AudioBuffer(rng.normal(0, 0.1, size=int(20 * SAMPLE_RATE)), SAMPLE_RATE)
        features = cqt(audio)
        emissions = emissions_from_cqt(features, full_bins_model())
        assert emissions.grid.n_frames == features.grid.n_frames
        sums = np.exp(emissions.log_probs).sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-6)

    def test_silence_is_finite(self):
        audio = AudioBuffer(np.zeros(int(5 * SAMPLE_RATE)), SAMPLE_RATE)
        emissions = predict_emissions(audio, full_bins_model())
        assert np.all(np.isfinite(emissions.log_probs))

    def test_predict_resamples(self):
        audio = AudioBuffer(np.zeros(44100 * 3), 44100)
        emissions = predict_emissions(audio, full_bins_model())
        assert emissions.grid.n_frames == FrameGrid.for_samples(int(3 * SAMPLE_RATE)).n_frames
