"""Audio ingestion, MFCC extraction, feature/manifest formats, synthetic corpora.

Feature file layout (little-endian): magic "CTDF", u16 version=1, u32 frame
count T, u32 coefficient count D, u32 reserved=0, then T*D float32 values,
time-major.  Manifests are tab-separated text: utt_id, speaker_id, feature
path relative to the manifest's directory ('#' comments and blank lines are
skipped).
"""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyInputError,
    FormatError,
    SequenceTooShortError,
    UnsupportedFormatError,
    ValidationError,
)
from .evaluation import Trial
from .numcore import make_rng

FEATURE_MAGIC = b"CTDF"
FEATURE_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sHIII")  # 18 bytes before the payload


@dataclass
class FeatureSequence:
    utt_id: str
    speaker_id: str
    frames: np.ndarray  # (T, D) float64 in memory, float32 on disk


@dataclass
class MfccConfig:
    sample_rate: int = 16000
    frame_len_ms: float = 25.0
    hop_ms: float = 10.0
    pre_emphasis: float = 0.97
    mel_filters: int = 40
    n_coeffs: int = 13
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 0 < self.hop_ms < self.frame_len_ms:
            raise ValidationError(
                f"need frame_len > hop > 0, got {self.frame_len_ms}/{self.hop_ms} ms"
            )
        if self.n_coeffs > self.mel_filters:
            raise ValidationError(
                f"n_coeffs {self.n_coeffs} exceeds mel_filters {self.mel_filters}"
            )

    @property
    def frame_samples(self) -> int:
        return int(round(self.sample_rate * self.frame_len_ms / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def fft_size(self) -> int:
        n = 1
        while n < self.frame_samples:
            n *= 2
        return n


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    path: str  # relative to the manifest file


@dataclass
class SynthSpec:
    n_speakers: int
    utts_per_speaker: int
    frames_per_utt: int
    dim: int
    speaker_mean_scale: float = 1.0
    ar_coefficient: float = 0.5
    noise_scale: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.n_speakers, self.utts_per_speaker, self.frames_per_utt, self.dim) < 1:
            raise ValidationError("synthetic corpus counts must all be >= 1")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValidationError(f"ar_coefficient must be in [0,1), got {self.ar_coefficient}")
        if self.speaker_mean_scale <= 0 or self.noise_scale <= 0:
            raise ValidationError("scales must be positive")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono 16-bit PCM RIFF/WAVE to float samples in [-1, 1] (scaled by 1/32768)."""
    try:
        with wave.open(os.fspath(path), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"compression '{wav.getcomptype()}' not supported")
            if wav.getnchannels() != 1:
                raise UnsupportedFormatError(f"channels = {wav.getnchannels()}, need mono")
            if wav.getsampwidth() != 2:
                raise UnsupportedFormatError(
                    f"bits_per_sample = {8 * wav.getsampwidth()}, need 16"
                )
            raw = wav.readframes(wav.getnframes())
            rate = wav.getframerate()
    except wave.Error as e:
        raise UnsupportedFormatError(f"not a readable RIFF/WAVE file: {e}") from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters (mel_filters, fft_size//2 + 1), evenly spaced in mel."""
    def to_mel(hz):
        return 2595.0 * np.log10(1.0 + hz / 700.0)

    def to_hz(mel):
        return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)

    n_bins = cfg.fft_size // 2 + 1
    points = to_hz(np.linspace(0.0, to_mel(cfg.sample_rate / 2.0), cfg.mel_filters + 2))
    bins = np.floor((cfg.fft_size + 1) * points / cfg.sample_rate).astype(int)
    fb = np.zeros((cfg.mel_filters, n_bins))
    for j in range(cfg.mel_filters):
        lo, mid, hi = bins[j], bins[j + 1], bins[j + 2]
        for i in range(lo, mid):
            fb[j, i] = (i - lo) / max(mid - lo, 1)
        for i in range(mid, hi):
            fb[j, i] = (hi - i) / max(hi - mid, 1)
    return fb


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis: rows are cosines, B @ B.T = I."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] *= np.sqrt(0.5)
    return basis


def mfcc(samples: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """MFCC matrix (T, n_coeffs) from raw samples.

    Pipeline: pre-emphasis, framing (T = 1 + floor((N - frame)/hop), valid
    frames only), Hamming window, power spectrum, mel filterbank, floored log,
    orthonormal DCT-II keeping coefficients 0..n_coeffs-1 (c0 included).
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    frame, hop = cfg.frame_samples, cfg.hop_samples
    if n < frame:
        raise SequenceTooShortError(f"{n} samples, need at least one {frame}-sample frame")
    emphasized = np.empty_like(samples)
    emphasized[0] = samples[0]
    emphasized[1:] = samples[1:] - cfg.pre_emphasis * samples[:-1]
    t = 1 + (n - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(t)[:, None]
    frames = emphasized[idx] * np.hamming(frame)
    power = np.abs(np.fft.rfft(frames, cfg.fft_size, axis=1)) ** 2 / cfg.fft_size
    energies = power @ mel_filterbank(cfg).T
    logmel = np.log(np.maximum(energies, cfg.log_floor))
    return logmel @ dct_basis(cfg.mel_filters)[: cfg.n_coeffs].T


def normalize_length(seq: FeatureSequence, length: int) -> FeatureSequence:
    """Cyclically tile the frames, then truncate: output frame i = input (i mod T)."""
    if length < 1:
        raise ValidationError(f"target length must be >= 1, got {length}")
    t = seq.frames.shape[0]
    if t < 1:
        raise EmptyInputError(f"utterance '{seq.utt_id}' has no frames")
    frames = seq.frames[np.arange(length) % t]
    return FeatureSequence(seq.utt_id, seq.speaker_id, frames)


def write_features(path, seq: FeatureSequence) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, t, d, 0))
        fh.write(frames.tobytes())


def read_features(path, utt_id: str = "", speaker_id: str = "") -> FeatureSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise FormatError("bad feature magic", 0)
    if len(blob) < FEATURE_HEADER.size:
        raise FormatError("truncated feature header", len(blob))
    _, version, t, d, _reserved = FEATURE_HEADER.unpack_from(blob)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version}", 4)
    expected = FEATURE_HEADER.size + 4 * t * d
    if len(blob) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes", len(blob))
    frames = np.frombuffer(blob, dtype="<f4", offset=FEATURE_HEADER.size)
    return FeatureSequence(utt_id, speaker_id, frames.reshape(t, d).astype(np.float64))


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.speaker_id}\t{e.path}\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"manifest line {ln}: expected 3 tab-separated fields")
            if parts[0] in seen:
                raise ValidationError(f"manifest line {ln}: duplicate utt_id '{parts[0]}'")
            seen.add(parts[0])
            entries.append(ManifestEntry(parts[0], parts[1], parts[2]))
    return entries


def load_corpus(manifest_path) -> list[FeatureSequence]:
    """Read every feature file a manifest references, in manifest order."""
    base = os.path.dirname(os.path.abspath(os.fspath(manifest_path)))
    return [
        read_features(os.path.join(base, e.path), e.utt_id, e.speaker_id)
        for e in read_manifest(manifest_path)
    ]


def speaker_means(spec: SynthSpec) -> np.ndarray:
    """Ground-truth mean vectors (n_speakers, dim) the generator draws from."""
    return np.stack(
        [
            spec.speaker_mean_scale * make_rng(spec.seed, s, 0).standard_normal(spec.dim)
            for s in range(spec.n_speakers)
        ]
    )


def synth_corpus(spec: SynthSpec, out_dir) -> dict[str, str]:
    """Generate a deterministic synthetic speaker corpus with split manifests.

    Speaker s draws a mean vector mu_s ~ speaker_mean_scale * N(0, I); each
    utterance is an AR(1) walk x_t = mu_s + rho*(x_{t-1} - mu_s) + noise.
    Per speaker the first quarter of utterances goes to test, the next tenth
    to val, the rest to train; "train_mini" keeps only the first 2 training
    utterances per speaker.  Returns the manifest paths by split name.
    """
    n_test = max(1, spec.utts_per_speaker // 4)
    n_val = max(1, spec.utts_per_speaker // 10)
    n_train = spec.utts_per_speaker - n_test - n_val
    if n_train < 1:
        raise ValidationError(
            f"utts_per_speaker={spec.utts_per_speaker} leaves no training utterances"
        )
    out_dir = os.fspath(out_dir)
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    means = speaker_means(spec)
    splits: dict[str, list[ManifestEntry]] = {
        "all": [], "train": [], "val": [], "test": [], "train_mini": []
    }
    for s in range(spec.n_speakers):
        speaker = f"spk{s:03d}"
        mu = means[s]
        train_seen = 0
        for u in range(spec.utts_per_speaker):
            noise = spec.noise_scale * make_rng(spec.seed, s, u + 1).standard_normal(
                (spec.frames_per_utt, spec.dim)
            )
            frames = np.empty((spec.frames_per_utt, spec.dim))
            prev = mu
            for ti in range(spec.frames_per_utt):
                prev = mu + spec.ar_coefficient * (prev - mu) + noise[ti]
                frames[ti] = prev
            utt = f"{speaker}_utt{u:03d}"
            rel = os.path.join("features", f"{utt}.ctdf")
            write_features(os.path.join(out_dir, rel), FeatureSequence(utt, speaker, frames))
            entry = ManifestEntry(utt, speaker, rel)
            splits["all"].append(entry)
            if u < n_test:
                splits["test"].append(entry)
            elif u < n_test + n_val:
                splits["val"].append(entry)
            else:
                splits["train"].append(entry)
                train_seen += 1
                if train_seen <= 2:
                    splits["train_mini"].append(entry)
    paths = {}
    for name, entries in splits.items():
        paths[name] = os.path.join(out_dir, f"{name}.tsv")
        write_manifest(paths[name], entries)
    return paths


def make_trials(
    entries: list[ManifestEntry],
    pairs_per_utt: int = 1,
    seed: int = 0,
    exhaustive: bool = False,
) -> list[Trial]:
    """Verification pairs over a manifest split: no self-pairs, deduplicated.

    Exhaustive mode enumerates every unordered pair.  Sampled mode draws up to
    pairs_per_utt same-speaker and different-speaker partners per utterance,
    deterministically from the seed, so target/nontarget counts stay balanced
    when enough partners exist.
    """
    if pairs_per_utt < 1:
        raise ValidationError(f"pairs_per_utt must be >= 1, got {pairs_per_utt}")
    speaker_of = {e.utt_id: e.speaker_id for e in entries}
    utts = [e.utt_id for e in entries]
    if exhaustive:
        return [
            Trial(utts[i], utts[j], speaker_of[utts[i]] == speaker_of[utts[j]])
            for i in range(len(utts))
            for j in range(i + 1, len(utts))
        ]
    rng = make_rng(seed)
    trials: list[Trial] = []
    seen: set[tuple[str, str]] = set()

    def add(a: str, b: str):
        key = (a, b) if a <= b else (b, a)
        if key not in seen:
            seen.add(key)
            trials.append(Trial(a, b, speaker_of[a] == speaker_of[b]))

    for utt in utts:
        same = [u for u in utts if u != utt and speaker_of[u] == speaker_of[utt]]
        diff = [u for u in utts if speaker_of[u] != speaker_of[utt]]
        for pool in (same, diff):
            k = min(pairs_per_utt, len(pool))
            if k:
                for j in rng.choice(len(pool), size=k, replace=False):
                    add(utt, pool[int(j)])
    return trials
