"""WAV, LAB, chord-list and feature-file round trips and error reporting."""
import numpy as np
import pytest

from chordalign.chords import ChordSegment, label_to_class
from chordalign.errors import DataError
from chordalign.fileio import (
    atomic_write_json,
    load_features,
    read_chord_list,
    read_lab,
    read_wav,
    save_features,
    write_lab,
    write_wav,
)


class TestWav:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = np.clip(rng.normal(0, 0.3, size=4000), -1, 1)
        path = tmp_path / "a.wav"
        write_wav(path, samples, 22050)
        audio = read_wav(path)
        assert audio.sample_rate == 22050
        assert audio.samples.shape == samples.shape
        assert np.max(np.abs(audio.samples - samples)) <= 1.0 / 32768 + 1e-12

    def test_clipping_on_write(self, tmp_path):
        path = tmp_path / "loud.wav"
        write_wav(path, np.array([2.0, -2.0, 0.0]), 22050)
        audio = read_wav(path)
        assert np.max(np.abs(audio.samples)) <= 1.0

    def test_stereo_downmix(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "st.wav"
        left = np.full(100, 8000, dtype=np.int16)
        right = np.zeros(100, dtype=np.int16)
        wavfile.write(path, 22050, np.stack([left, right], axis=1))
        audio = read_wav(path)
        assert audio.samples.shape == (100,)
        assert audio.samples[0] == pytest.approx(4000 / 32768.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_wav(tmp_path / "ghost.wav")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not audio")
        with pytest.raises(DataError):
            read_wav(path)


class TestLab:
    def test_round_trip(self, tmp_path):
        segments = [
            ChordSegment(onset=0.0, duration=2.5, label_id=label_to_class("C:maj"), label="C:maj"),
            ChordSegment(onset=2.5, duration=1.5, label_id=label_to_class("A:min7"), label="A:min7"),
            ChordSegment(onset=4.0, duration=1.0, label_id=label_to_class("N"), label="N"),
        ]
        path = tmp_path / "x.lab"
        write_lab(path, segments)
        loaded = read_lab(path)
        assert [(s.onset, s.duration, s.label_id, s.label) for s in loaded] == [
            (s.onset, s.duration, s.label_id, s.label) for s in segments
        ]

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "c.lab"
        path.write_text("# header\n\n0.0 1.0 C:maj\n1.0 2.0 G:7\n", encoding="utf-8")
        assert len(read_lab(path)) == 2

    def test_error_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.lab"
        path.write_text("0.0 1.0 C:maj\n1.0 oops G:7\n", encoding="utf-8")
        with pytest.raises(DataError, match="bad.lab:2"):
            read_lab(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "two.lab"
        path.write_text("0.0 1.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="two.lab:1"):
            read_lab(path)

    def test_negative_duration(self, tmp_path):
        path = tmp_path / "neg.lab"
        path.write_text("1.0 0.5 C:maj\n", encoding="utf-8")
        with pytest.raises(DataError, match="ends before"):
            read_lab(path)

    def test_overlap_rejected(self, tmp_path):
        path = tmp_path / "ov.lab"
        path.write_text("0.0 2.0 C:maj\n1.5 3.0 G:7\n", encoding="utf-8")
        with pytest.raises(DataError, match="overlap"):
            read_lab(path)

    def test_out_of_order_rejected(self, tmp_path):
        path = tmp_path / "oo.lab"
        path.write_text("2.0 3.0 C:maj\n0.0 1.0 G:7\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_lab(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "empty.lab"
        path.write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_lab(path)
        with pytest.raises(DataError):
            write_lab(tmp_path / "out.lab", [])


class TestChordList:
    def test_reads_labels_and_ids(self, tmp_path):
        path = tmp_path / "chords.txt"
        path.write_text("C:maj\nG:7  # dominant\n\n# comment line\nA:min\n", encoding="utf-8")
        ids, texts = read_chord_list(path)
        assert texts == ["C:maj", "G:7", "A:min"]
        assert ids == [label_to_class(t) for t in texts]

    def test_sharp_roots_are_not_comments(self, tmp_path):
        # '#' only opens a comment at line start or after whitespace
        path = tmp_path / "chords.txt"
        path.write_text("F#:min\nA#:min7/b3  # inverted\nG#:hdim7\n", encoding="utf-8")
        ids, texts = read_chord_list(path)
        assert texts == ["F#:min", "A#:min7/b3", "G#:hdim7"]
        assert ids == [label_to_class(t) for t in texts]

    def test_parse_error_has_line_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("C:maj\nH:maj\n", encoding="utf-8")
        with pytest.raises(DataError, match="bad.txt:2"):
            read_chord_list(path)

    def test_empty_list(self, tmp_path):
        path = tmp_path / "none.txt"
        path.write_text("# only comments\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_chord_list(path)


class TestFeatures:
    def test_round_trip(self, tmp_path):
        values = np.arange(24, dtype=np.float32).reshape(4, 6)
        path = tmp_path / "f.cqt"
        save_features(path, values, sample_rate=22050, hop=2048)
        loaded, meta = load_features(path)
        assert np.array_equal(loaded, values)
        assert meta["shape"] == [4, 6]
        assert meta["sample_rate"] == 22050

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "f.cqt"
        save_features(path, np.zeros((2, 2), dtype=np.float32))
        path.with_suffix(".cqt.json").unlink()
        with pytest.raises(DataError):
            load_features(path)

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "f.cqt"
        save_features(path, np.zeros((2, 3), dtype=np.float32))
        meta_path = path.with_suffix(".cqt.json")
        meta = meta_path.read_text(encoding="utf-8").replace("3", "4")
        meta_path.write_text(meta, encoding="utf-8")
        with pytest.raises(DataError):
            load_features(path)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(DataError):
            save_features(tmp_path / "f.cqt", np.zeros(5, dtype=np.float32))


class TestAtomicity:
    def test_no_temp_files_left(self, tmp_path):
        write_wav(tmp_path / "a.wav", np.zeros(100), 22050)
        write_lab(
            tmp_path / "a.lab",
            [ChordSegment(onset=0.0, duration=1.0, label_id=0, label="C:maj")],
        )
        atomic_write_json(tmp_path / "a.json", {"k": 1})
        save_features(tmp_path / "a.cqt", np.zeros((2, 2), dtype=np.float32))
        leftovers = [p.name for p in tmp_path.iterdir() if p.suffix == ".tmp"]
        assert leftovers == []
