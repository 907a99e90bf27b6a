import json
import wave

import numpy as np
import pytest

from idlspeech import corpus
from idlspeech.corpus import (
    ClassExhaustedError,
    ManifestError,
    Utterance,
    concat_and_segment,
    decode_wav,
    encode_wav,
    load_manifest,
    random_crop_and_subsample,
    synth_corpus,
)
from idlspeech.dsp import MelSpectrogram


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def spec_of(n_frames, fill=0.0):
    return MelSpectrogram(np.full((n_frames, 40), fill, dtype=np.float32))


def ramp(n_frames, start=0):
    frames = np.repeat(np.arange(start, start + n_frames, dtype=np.float32)[:, None], 40, axis=1)
    return MelSpectrogram(frames)


class TestManifest:
    def test_three_entries_in_order(self, tmp_path):
        recs = [{"path": f"a{i}.wav", "speaker_id": f"s{i}", "label": i % 2, "split": "train"} for i in range(3)]
        write_lines(tmp_path / "m.jsonl", recs)
        entries = load_manifest(tmp_path / "m.jsonl")
        assert [e.path for e in entries] == ["a0.wav", "a1.wav", "a2.wav"]
        assert entries[1].label == 1

    def test_unknown_split(self, tmp_path):
        write_lines(tmp_path / "m.jsonl", [{"path": "a.wav", "speaker_id": "s", "label": None, "split": "dev"}])
        with pytest.raises(ManifestError, match="unknown split"):
            load_manifest(tmp_path / "m.jsonl")

    def test_duplicate_path(self, tmp_path):
        recs = [{"path": "a.wav", "speaker_id": "s", "label": None, "split": "train"},
                {"path": "b.wav", "speaker_id": "s", "label": None, "split": "train"},
                {"path": "a.wav", "speaker_id": "t", "label": None, "split": "test"}]
        paths = [r["path"] for r in recs]
        assert len(set(paths)) < len(paths)
        write_lines(tmp_path / "m.jsonl", recs)
        with pytest.raises(ManifestError, match="duplicate path"):
            load_manifest(tmp_path / "m.jsonl")

    def test_malformed(self, tmp_path):
        (tmp_path / "m.jsonl").write_text("{not json\n")
        with pytest.raises(ManifestError, match="malformed"):
            load_manifest(tmp_path / "m.jsonl")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.jsonl")

    def test_empty_speaker(self, tmp_path):
        write_lines(tmp_path / "m.jsonl", [{"path": "a.wav", "speaker_id": "", "label": None, "split": "train"}])
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.jsonl")


def write_pcm(path, values, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(values, dtype="<i2").tobytes() if width == 2 else bytes(values))


class TestWav:
    def test_zeros(self, tmp_path):
        write_pcm(tmp_path / "z.wav", np.zeros(321))
        w = decode_wav(tmp_path / "z.wav")
        assert w.samples.shape == (321,) and not w.samples.any()

    def test_full_scale(self, tmp_path):
        write_pcm(tmp_path / "one.wav", [32767])
        assert decode_wav(tmp_path / "one.wav").samples[0] == 32767 / 32768

    def test_order_preserved(self, tmp_path):
        vals = np.array([-32768, -1, 0, 1, 1000], dtype=np.int16)
        write_pcm(tmp_path / "o.wav", vals)
        np.testing.assert_array_equal(decode_wav(tmp_path / "o.wav").samples, vals / 32768)

    def test_wrong_rate(self, tmp_path):
        write_pcm(tmp_path / "r.wav", np.zeros(10), rate=8000)
        with pytest.raises(ValueError, match="unsupported sample rate"):
            decode_wav(tmp_path / "r.wav")

    def test_stereo(self, tmp_path):
        write_pcm(tmp_path / "s.wav", np.zeros(20), channels=2)
        with pytest.raises(ValueError, match="mono"):
            decode_wav(tmp_path / "s.wav")

    def test_8bit(self, tmp_path):
        write_pcm(tmp_path / "b.wav", [128] * 10, width=1)
        with pytest.raises(ValueError, match="unsupported encoding"):
            decode_wav(tmp_path / "b.wav")

    def test_encode_round_trip(self, tmp_path):
        w = corpus.Waveform(np.round(np.linspace(-0.5, 0.5, 777) * 32768) / 32768)
        encode_wav(tmp_path / "e.wav", w)
        np.testing.assert_array_equal(decode_wav(tmp_path / "e.wav").samples, w.samples)


class TestSynth:
    def test_deterministic(self):
        a, ea = synth_corpus(2, 1, seed=7)
        b, eb = synth_corpus(2, 1, seed=7)
        assert ea == eb
        for x, y in zip(a, b):
            assert np.array_equal(x.samples, y.samples)

    def test_counts(self):
        waves, entries = synth_corpus(10, 4, seed=1)
        assert len(waves) == len(entries) == 40
        assert len({e.speaker_id for e in entries}) == 10

    def test_durations_and_range(self):
        waves, _ = synth_corpus(3, 3, seed=2)
        for w in waves:
            assert 2.0 <= w.duration_s <= 6.0
            assert np.abs(w.samples).max() <= 1.0

    def test_f0_separation(self):
        f0, res = corpus.speaker_table(10, np.random.default_rng(1))
        gaps = [abs(a - b) for i, a in enumerate(f0) for b in f0[i + 1 :]]
        assert min(gaps) >= 15.0
        assert f0.min() >= 100 and f0.max() <= 300
        assert len(set(res)) == 10

    def test_labeled_splits(self):
        _, entries = synth_corpus(12, 1, seed=3, labeled=True, split_fractions=(0.6, 0.2, 0.2))
        labels = [e.label for e in entries]
        assert labels.count(1) == 3
        splits = {e.split for e in entries}
        assert splits == {"train", "validation", "test"}


class TestConcatAndSegment:
    def test_three_segments(self):
        segs = concat_and_segment({"a": [spec_of(200), spec_of(160)]})
        assert len(segs) == 3
        assert all(s.features.shape == (40, 120) for s in segs)

    def test_too_short(self):
        assert concat_and_segment({"a": [spec_of(119)]}) == []

    def test_boundary_spanning(self):
        segs = concat_and_segment({"a": [ramp(100), ramp(150, start=100)]})
        assert len(segs) == 2
        # manual concatenation: stream frame i carries value i
        np.testing.assert_array_equal(segs[0].features[0], np.arange(0, 120))
        np.testing.assert_array_equal(segs[1].features[0], np.arange(120, 240))
        assert segs[0].provenance == (("a#0", 0, 100), ("a#1", 0, 20))
        assert segs[1].provenance == (("a#1", 20, 140),)

    @pytest.mark.parametrize("frames", [[119], [120], [121, 300], [50, 50, 50], [600]])
    def test_count_formula(self, frames):
        segs = concat_and_segment({"s": [spec_of(f) for f in frames]})
        assert len(segs) == sum(frames) // 120


def make_utts(counts_by_label, frames=360):
    utts = []
    for label, n in counts_by_label.items():
        for k in range(n):
            utts.append(Utterance(f"u{label}_{k}", f"s{label}_{k}", label, ramp(frames)))
    return utts


class TestCropSubsample:
    def test_balance(self):
        # 50 utterances of class 0 and 80 of class 1, one segment each
        segs = random_crop_and_subsample(make_utts({0: 50, 1: 80}, frames=130), seed=0)
        labels = [s.label for s in segs]
        assert len(segs) == 100 and labels.count(0) == 50 and labels.count(1) == 50
        assert len({s.key for s in segs}) == 100

    def test_equal_lengths_no_offset(self):
        segs = random_crop_and_subsample(make_utts({0: 2, 1: 2}), seed=5)
        assert all(s.provenance[0][1] % 120 == 0 for s in segs)
        for s in segs:
            np.testing.assert_array_equal(s.features[0], np.arange(120) + 120 * s.segment_index)

    def test_same_seed_same_subset(self):
        utts = [Utterance(f"u{k}", f"s{k}", k % 2, ramp(300 + 17 * k)) for k in range(12)]
        a = random_crop_and_subsample(utts, seed=9)
        b = random_crop_and_subsample(utts, seed=9)
        assert [s.key for s in a] == [s.key for s in b]
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_crop_to_shortest(self):
        utts = [Utterance("a", "s", 0, ramp(250)), Utterance("b", "t", 1, ramp(1000))]
        segs = random_crop_and_subsample(utts, seed=1)
        assert len(segs) == 4  # floor(250/120) = 2 per class

    def test_class_exhausted(self):
        utts = [Utterance("a", "s", 0, ramp(100)), Utterance("b", "t", 1, ramp(500))]
        with pytest.raises(ClassExhaustedError, match="class exhausted"):
            random_crop_and_subsample(utts, seed=0)

    def test_missing_class(self):
        with pytest.raises(ClassExhaustedError):
            random_crop_and_subsample(make_utts({0: 3}), seed=0)
