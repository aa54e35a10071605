import os
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctdnn.data import (
    FeatureSequence,
    ManifestEntry,
    MfccConfig,
    SynthSpec,
    dct_basis,
    load_corpus,
    make_trials,
    mel_filterbank,
    mfcc,
    normalize_length,
    read_features,
    read_manifest,
    read_wav,
    speaker_means,
    synth_corpus,
    write_features,
    write_manifest,
)
from ctdnn.errors import (
    FormatError,
    SequenceTooShortError,
    UnsupportedFormatError,
    ValidationError,
)


def write_test_wav(path, samples, rate=16000, channels=1, width=2):
    with wave.open(os.fspath(path), "wb") as wav:
        wav.setnchannels(channels)
        wav.setsampwidth(width)
        wav.setframerate(rate)
        data = np.asarray(samples, dtype="<i2")
        if channels == 2:
            data = np.repeat(data, 2)
        wav.writeframes(data.tobytes())


class TestReadWav:
    def test_zero_samples(self, tmp_path):
        path = tmp_path / "z.wav"
        write_test_wav(path, np.zeros(16, dtype=np.int16))
        samples, rate = read_wav(path)
        assert rate == 16000
        assert samples.shape == (16,)
        assert not samples.any()

    def test_full_scale_value(self, tmp_path):
        path = tmp_path / "fs.wav"
        write_test_wav(path, np.array([32767, -32768], dtype=np.int16))
        samples, _ = read_wav(path)
        assert samples[0] == 0.999969482421875  # 32767/32768 exactly
        assert samples[1] == -1.0

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "st.wav"
        write_test_wav(path, np.zeros(8, dtype=np.int16), channels=2)
        with pytest.raises(UnsupportedFormatError, match="channels"):
            read_wav(path)

    def test_8bit_rejected(self, tmp_path):
        path = tmp_path / "w8.wav"
        write_test_wav(path, np.zeros(8, dtype=np.int16), width=1)
        with pytest.raises(UnsupportedFormatError, match="bits_per_sample"):
            read_wav(path)

    def test_non_wav_rejected(self, tmp_path):
        path = tmp_path / "not.wav"
        path.write_bytes(b"this is not audio at all")
        with pytest.raises(UnsupportedFormatError):
            read_wav(path)


class TestMfcc:
    def test_one_second_frame_count(self, rng):
        out = mfcc(rng.standard_normal(16000) * 0.1, MfccConfig())
        assert out.shape == (98, 13)  # 1 + (16000-400)//160

    def test_all_zero_signal_constant_frames(self):
        out = mfcc(np.zeros(4000), MfccConfig())
        assert np.allclose(out, out[0])

    def test_dct_orthonormal(self):
        b = dct_basis(40)
        assert np.abs(b @ b.T - np.eye(40)).max() < 1e-10

    def test_too_short_rejected(self):
        with pytest.raises(SequenceTooShortError):
            mfcc(np.zeros(300), MfccConfig())

    def test_coefficient_count_configurable(self, rng):
        out = mfcc(rng.standard_normal(8000), MfccConfig(n_coeffs=30))
        assert out.shape[1] == 30

    def test_filterbank_covers_spectrum(self):
        fb = mel_filterbank(MfccConfig())
        assert fb.shape == (40, 257)
        assert np.all(fb >= 0.0)
        assert fb.sum(axis=1).min() > 0.0  # no dead filters at this resolution

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MfccConfig(n_coeffs=50, mel_filters=40)
        with pytest.raises(ValidationError):
            MfccConfig(frame_len_ms=10.0, hop_ms=25.0)

    @given(st.integers(400, 40000))
    @settings(max_examples=30, deadline=None)
    def test_frame_count_law(self, n):
        out = mfcc(np.sin(np.linspace(0.0, 100.0, n)), MfccConfig())
        assert out.shape[0] == 1 + (n - 400) // 160


class TestNormalizeLength:
    def test_tiling(self):
        frames = np.array([[1.0], [2.0], [3.0]])
        out = normalize_length(FeatureSequence("u", "s", frames), 7)
        assert np.array_equal(out.frames.ravel(), [1, 2, 3, 1, 2, 3, 1])

    def test_identity_when_equal(self, rng):
        frames = rng.standard_normal((1000, 4))
        out = normalize_length(FeatureSequence("u", "s", frames), 1000)
        assert np.array_equal(out.frames, frames)

    def test_truncation(self, rng):
        frames = rng.standard_normal((500, 3))
        out = normalize_length(FeatureSequence("u", "s", frames), 300)
        assert np.array_equal(out.frames, frames[:300])

    @given(st.integers(1, 40), st.integers(1, 120), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_modular_indexing_property(self, t, length, seed):
        frames = np.random.default_rng(seed).standard_normal((t, 2))
        out = normalize_length(FeatureSequence("u", "s", frames), length)
        assert out.frames.shape == (length, 2)
        for i in range(length):
            assert np.array_equal(out.frames[i], frames[i % t])


class TestFeatureFiles:
    def test_round_trip_within_f32(self, rng, tmp_path):
        frames = rng.standard_normal((10, 13))
        path = tmp_path / "u.ctdf"
        write_features(path, FeatureSequence("u", "s", frames))
        loaded = read_features(path, "u", "s")
        assert np.array_equal(loaded.frames, frames.astype(np.float32).astype(np.float64))

    def test_header_is_18_bytes(self, rng, tmp_path):
        path = tmp_path / "h.ctdf"
        write_features(path, FeatureSequence("u", "s", rng.standard_normal((300, 13))))
        blob = path.read_bytes()
        assert len(blob) == 18 + 4 * 300 * 13
        magic, version, t, d, reserved = struct.unpack_from("<4sHIII", blob)
        assert (magic, version, t, d, reserved) == (b"CTDF", 1, 300, 13, 0)

    def test_empty_file_offset_zero(self, tmp_path):
        path = tmp_path / "e.ctdf"
        path.write_bytes(b"")
        with pytest.raises(FormatError) as exc:
            read_features(path)
        assert exc.value.offset == 0

    def test_write_read_write_idempotent(self, rng, tmp_path):
        frames = rng.standard_normal((17, 5))
        p1, p2 = tmp_path / "a.ctdf", tmp_path / "b.ctdf"
        write_features(p1, FeatureSequence("u", "s", frames))
        write_features(p2, read_features(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_payload(self, rng, tmp_path):
        path = tmp_path / "t.ctdf"
        write_features(path, FeatureSequence("u", "s", rng.standard_normal((4, 2))))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="size mismatch"):
            read_features(path)


class TestManifest:
    def test_round_trip_with_comments(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("# corpus\nu1\ts1\tfeatures/u1.ctdf\n\nu2\ts1\tfeatures/u2.ctdf\n")
        entries = read_manifest(path)
        assert entries == [
            ManifestEntry("u1", "s1", "features/u1.ctdf"),
            ManifestEntry("u2", "s1", "features/u2.ctdf"),
        ]
        out = tmp_path / "o.tsv"
        write_manifest(out, entries)
        assert read_manifest(out) == entries

    def test_duplicate_utt_rejected(self, tmp_path):
        path = tmp_path / "d.tsv"
        path.write_text("u1\ts1\ta.ctdf\nu1\ts2\tb.ctdf\n")
        with pytest.raises(ValidationError, match="duplicate"):
            read_manifest(path)


class TestSynthCorpus:
    def test_deterministic_byte_identical(self, tmp_path):
        spec = SynthSpec(n_speakers=3, utts_per_speaker=6, frames_per_utt=20, dim=4, seed=7)
        paths_a = synth_corpus(spec, tmp_path / "a")
        paths_b = synth_corpus(spec, tmp_path / "b")
        for name in paths_a:
            assert (
                open(paths_a[name], "rb").read() == open(paths_b[name], "rb").read()
            )
        ea = read_manifest(paths_a["all"])
        for entry in ea:
            fa = open(tmp_path / "a" / entry.path, "rb").read()
            fb = open(tmp_path / "b" / entry.path, "rb").read()
            assert fa == fb

    def test_split_sizes(self, tmp_path):
        spec = SynthSpec(n_speakers=10, utts_per_speaker=20, frames_per_utt=10, dim=3, seed=0)
        paths = synth_corpus(spec, tmp_path)
        sizes = {name: len(read_manifest(p)) for name, p in paths.items()}
        assert sizes == {"all": 200, "test": 50, "val": 20, "train": 130, "train_mini": 20}

    def test_degenerate_ar_collapses_to_mean(self, tmp_path):
        spec = SynthSpec(
            n_speakers=2, utts_per_speaker=4, frames_per_utt=15, dim=3,
            ar_coefficient=0.0, noise_scale=1e-12, seed=1,
        )
        paths = synth_corpus(spec, tmp_path)
        seqs = load_corpus(paths["all"])
        by_speaker = {}
        for seq in seqs:
            by_speaker.setdefault(seq.speaker_id, []).append(seq.frames)
        for frames_list in by_speaker.values():
            stacked = np.concatenate(frames_list)
            assert stacked.std(axis=0).max() < 1e-6  # every frame equals mu_s

    def test_sample_mean_near_speaker_mean(self, tmp_path):
        # iid frames (rho=0): the mean over n frames sits within the
        # 3*noise/sqrt(n) standard-error band of the true speaker mean
        spec = SynthSpec(
            n_speakers=4, utts_per_speaker=10, frames_per_utt=200, dim=5,
            ar_coefficient=0.0, seed=3,
        )
        paths = synth_corpus(spec, tmp_path)
        seqs = load_corpus(paths["all"])
        mus = speaker_means(spec)
        by_speaker = {}
        for seq in seqs:
            by_speaker.setdefault(seq.speaker_id, []).append(seq.frames)
        for s, speaker in enumerate(sorted(by_speaker)):
            stacked = np.concatenate(by_speaker[speaker])
            bound = 3.0 * spec.noise_scale / np.sqrt(stacked.shape[0])
            assert np.abs(stacked.mean(axis=0) - mus[s]).max() < bound

    def test_sample_mean_near_speaker_mean_ar(self, tmp_path):
        # with rho > 0 the standard error inflates by sqrt((1+rho)/(1-rho))
        # on top of the stationary per-frame deviation noise/sqrt(1-rho^2)
        spec = SynthSpec(n_speakers=4, utts_per_speaker=10, frames_per_utt=200, dim=5, seed=3)
        paths = synth_corpus(spec, tmp_path)
        seqs = load_corpus(paths["all"])
        mus = speaker_means(spec)
        rho = spec.ar_coefficient
        stationary = spec.noise_scale / np.sqrt(1 - rho**2)
        inflation = np.sqrt((1 + rho) / (1 - rho))
        by_speaker = {}
        for seq in seqs:
            by_speaker.setdefault(seq.speaker_id, []).append(seq.frames)
        for s, speaker in enumerate(sorted(by_speaker)):
            stacked = np.concatenate(by_speaker[speaker])
            bound = 3.0 * stationary * inflation / np.sqrt(stacked.shape[0])
            assert np.abs(stacked.mean(axis=0) - mus[s]).max() < bound

    def test_nearest_class_mean_separability(self, tmp_path):
        spec = SynthSpec(n_speakers=10, utts_per_speaker=10, frames_per_utt=50, dim=13, seed=11)
        paths = synth_corpus(spec, tmp_path)
        seqs = load_corpus(paths["all"])
        speakers = sorted({s.speaker_id for s in seqs})
        means = {
            spk: np.mean([s.frames.mean(axis=0) for s in seqs if s.speaker_id == spk], axis=0)
            for spk in speakers
        }
        hits = 0
        for seq in seqs:
            v = seq.frames.mean(axis=0)
            best = min(speakers, key=lambda spk: np.linalg.norm(v - means[spk]))
            hits += best == seq.speaker_id
        assert hits / len(seqs) >= 0.99

    def test_too_few_utts_rejected(self, tmp_path):
        spec = SynthSpec(n_speakers=2, utts_per_speaker=2, frames_per_utt=5, dim=2, seed=0)
        with pytest.raises(ValidationError):
            synth_corpus(spec, tmp_path)

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SynthSpec(n_speakers=0, utts_per_speaker=5, frames_per_utt=5, dim=2)
        with pytest.raises(ValidationError):
            SynthSpec(2, 5, 5, 2, ar_coefficient=1.0)


class TestMakeTrials:
    def entries(self, n_speakers, utts):
        return [
            ManifestEntry(f"s{s}u{u}", f"spk{s}", f"f/s{s}u{u}.ctdf")
            for s in range(n_speakers)
            for u in range(utts)
        ]

    def test_one_speaker_two_utts(self):
        trials = make_trials(self.entries(1, 2), pairs_per_utt=3, seed=0)
        assert len(trials) == 1
        assert trials[0].target

    def test_exhaustive_two_by_two(self):
        trials = make_trials(self.entries(2, 2), exhaustive=True)
        targets = [t for t in trials if t.target]
        nontargets = [t for t in trials if not t.target]
        assert (len(targets), len(nontargets)) == (2, 4)

    def test_deterministic(self):
        a = make_trials(self.entries(4, 5), pairs_per_utt=2, seed=9)
        b = make_trials(self.entries(4, 5), pairs_per_utt=2, seed=9)
        assert a == b

    def test_no_self_pairs_no_duplicates(self):
        trials = make_trials(self.entries(5, 6), pairs_per_utt=3, seed=2)
        seen = set()
        for t in trials:
            assert t.enroll_utt != t.test_utt
            key = tuple(sorted((t.enroll_utt, t.test_utt)))
            assert key not in seen
            seen.add(key)

    def test_every_utterance_appears(self):
        entries = self.entries(3, 4)
        trials = make_trials(entries, pairs_per_utt=1, seed=5)
        used = {t.enroll_utt for t in trials} | {t.test_utt for t in trials}
        assert used == {e.utt_id for e in entries}

    def test_roughly_balanced(self):
        trials = make_trials(self.entries(6, 6), pairs_per_utt=2, seed=1)
        targets = sum(t.target for t in trials)
        assert 0.3 < targets / len(trials) < 0.7
