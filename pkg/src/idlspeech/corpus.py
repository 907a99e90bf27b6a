"""Manifests, WAV I/O, synthetic speaker corpora and fixed-length segmentation."""

from __future__ import annotations

import json
import logging
import wave as wavelib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dsp import SAMPLE_RATE, MelSpectrogram

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
SEGMENT_LEN = 120
N_MELS = 40


class ManifestError(ValueError):
    pass


class ClassExhaustedError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker_id: str
    label: int | None = None
    split: str = "train"

    def __post_init__(self):
        if not self.speaker_id:
            raise ManifestError("speaker_id must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if self.label not in (None, 0, 1):
            raise ManifestError(f"label must be 0, 1 or null, got {self.label!r}")

    @property
    def utterance_id(self) -> str:
        return Path(self.path).stem

    def to_json(self) -> str:
        return json.dumps(
            {"path": self.path, "speaker_id": self.speaker_id, "label": self.label, "split": self.split}
        )


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class Segment:
    """A 40 x 120 feature slice; the unit treated as one instance."""

    features: np.ndarray
    utterance_id: str
    speaker_id: str
    label: int | None = None
    pseudo_label: int | None = None
    segment_index: int = 0
    # (source utterance id, first frame, end frame) pieces, in time order
    provenance: tuple[tuple[str, int, int], ...] = ()

    def __post_init__(self):
        if self.features.shape != (N_MELS, SEGMENT_LEN):
            raise ValueError(f"segment features must be {N_MELS}x{SEGMENT_LEN}, got {self.features.shape}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.utterance_id, self.segment_index)


@dataclass
class Utterance:
    """Labelled feature sequence used by the downstream task."""

    utterance_id: str
    speaker_id: str
    label: int | None
    features: MelSpectrogram
    split: str = "train"
    frame_offset: int = 0  # start frame within the source recording after cropping


# -- manifest ---------------------------------------------------------------------


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
        if not isinstance(rec, dict) or not {"path", "speaker_id", "split"} <= rec.keys():
            raise ManifestError(f"{path}:{lineno}: malformed record (need path, speaker_id, split)")
        if rec["split"] not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {rec['split']!r}")
        if rec["path"] in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate path {rec['path']!r}")
        seen.add(rec["path"])
        try:
            entries.append(ManifestEntry(str(rec["path"]), str(rec["speaker_id"]), rec.get("label"), rec["split"]))
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in entries))


def resolve_audio_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# -- WAV --------------------------------------------------------------------------


def decode_wav(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz; samples scaled by 1/32768."""
    try:
        with wavelib.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wavelib.Error as exc:
        raise ValueError(f"{path}: unsupported encoding ({exc})") from None
    if channels != 1:
        raise ValueError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise ValueError(f"{path}: unsupported encoding, expected 16-bit PCM")
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: unsupported sample rate {rate}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def encode_wav(path, wave: Waveform) -> None:
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    with wavelib.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(wave.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


# -- synthetic corpus -------------------------------------------------------------


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0_hz: float
    resonance_hz: float
    label: int | None = None
    split: str = "train"


@dataclass
class SynthStyle:
    """Generator ranges; the depressed class speaks slower with flatter pitch.

    Per syllable the resonance moves to a random "vowel" (a multiple of the
    speaker's resonance within +/- ``vowel_spread``) and the pitch takes a
    random accent, so single frames carry only part of the speaker identity.
    """

    syllable_rate_hz: tuple[float, float] = (4.0, 5.5)
    pitch_depth: tuple[float, float] = (0.3, 0.4)
    depressed_syllable_rate_hz: tuple[float, float] = (1.6, 2.4)
    depressed_pitch_depth: tuple[float, float] = (0.01, 0.03)
    vowel_spread: float = 0.6
    duration_s: tuple[float, float] = (2.0, 6.0)
    noise_db: float = -30.0


def speaker_table(n_speakers: int, rng: np.random.Generator, f0_range=(100.0, 300.0),
                  resonance_range=(500.0, 3000.0)) -> tuple[np.ndarray, np.ndarray]:
    """Distinct f0 and resonance per speaker.

    f0 values sit on an evenly spaced grid over ``f0_range`` (spacing >= 15 Hz
    whenever n_speakers <= 14) with a small jitter that keeps the spacing
    above 15 Hz; resonance centres are a shuffled grid over
    ``resonance_range``.
    """
    lo, hi = f0_range
    if n_speakers == 1:
        f0 = np.array([(lo + hi) / 2])
    else:
        f0 = np.linspace(lo, hi, n_speakers)
        spacing = (hi - lo) / (n_speakers - 1)
        jitter = max(0.0, min(2.0, (spacing - 15.0) / 2))
        f0 = np.clip(f0 + rng.uniform(-jitter, jitter, n_speakers), lo, hi)
    res = np.linspace(*resonance_range, n_speakers)
    return rng.permutation(f0), rng.permutation(res)


def _smooth_steps(values: np.ndarray, n_samples: int, per_step: float) -> np.ndarray:
    """Piecewise-constant per-syllable values with raised-cosine transitions."""
    pos = np.arange(n_samples) / per_step
    idx = np.minimum(pos.astype(int), values.size - 2)
    frac = pos - idx
    w = 0.5 - 0.5 * np.cos(np.pi * np.clip((frac - 0.75) * 4.0, 0.0, 1.0))
    return values[idx] * (1 - w) + values[idx + 1] * w


def _synth_utterance(profile: SpeakerProfile, style: SynthStyle, rng: np.random.Generator) -> Waveform:
    sr = SAMPLE_RATE
    n = int(rng.uniform(*style.duration_s) * sr)
    t = np.arange(n) / sr
    depressed = profile.label == 1
    rate = rng.uniform(*(style.depressed_syllable_rate_hz if depressed else style.syllable_rate_hz))
    depth = rng.uniform(*(style.depressed_pitch_depth if depressed else style.pitch_depth))
    per_syl = sr / rate
    n_syl = int(np.ceil(n / per_syl)) + 2

    accents = rng.uniform(-1.0, 1.0, n_syl)
    vowels = 1.0 + rng.uniform(-style.vowel_spread, style.vowel_spread, n_syl)
    f0 = profile.f0_hz * (1.0 + depth * _smooth_steps(accents, n, per_syl))
    formant = profile.resonance_hz * _smooth_steps(vowels, n, per_syl)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    x = np.zeros(n)
    for k in range(1, int(4000.0 // profile.f0_hz) + 1):
        amp = k**-0.8 + 2.0 * np.exp(-0.5 * ((k * f0 - formant) / 250.0) ** 2)
        x += amp * np.sin(k * phase)

    # syllable bursts, one per syllable period
    env = 0.5 * (1 - np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    x *= 0.08 + env**1.5
    x *= 0.5 / np.max(np.abs(x))
    noise_std = np.sqrt(np.mean(x**2)) * 10 ** (style.noise_db / 20)
    x += rng.normal(0.0, noise_std, n)
    return Waveform(np.clip(x, -1.0, 1.0), sr)


def synth_corpus(n_speakers: int, utts_per_speaker: int, seed: int, *, labeled: bool = False,
                 depressed_fraction: float = 0.25, split_fractions: Sequence[float] | None = None,
                 speaker_prefix: str = "spk", style: SynthStyle | None = None
                 ) -> tuple[list[Waveform], list[ManifestEntry]]:
    """Deterministic harmonic-speech corpus.

    Each speaker gets a distinct f0 in [100, 300] Hz and a distinct resonance
    peak; each utterance is 2-6 s of harmonic signal with syllable-rate
    amplitude bursts plus low-level noise.  With ``labeled=True`` a
    ``depressed_fraction`` of speakers is labelled 1 and rendered with slower
    syllable rate and flatter pitch.  ``split_fractions`` (train, validation,
    test) assigns whole speakers to splits, stratified by label.
    Manifest paths are relative: ``wav/<speaker>_<k>.wav``.
    """
    if n_speakers < 1 or utts_per_speaker < 1:
        raise ValueError("n_speakers and utts_per_speaker must be positive")
    style = style or SynthStyle()
    ss = np.random.SeedSequence(seed)
    table_seed, label_seed, utt_seed = ss.spawn(3)
    f0, res = speaker_table(n_speakers, np.random.default_rng(table_seed))
    ids = [f"{speaker_prefix}{i:03d}" for i in range(n_speakers)]

    labels: list[int | None] = [None] * n_speakers
    splits = ["train"] * n_speakers
    lrng = np.random.default_rng(label_seed)
    if labeled:
        n_dep = max(1, int(round(depressed_fraction * n_speakers)))
        dep = set(lrng.choice(n_speakers, size=n_dep, replace=False).tolist())
        labels = [int(i in dep) for i in range(n_speakers)]
    if split_fractions is not None:
        splits = _assign_splits(labels, split_fractions, lrng)

    profiles = [SpeakerProfile(ids[i], float(f0[i]), float(res[i]), labels[i], splits[i]) for i in range(n_speakers)]
    waves, entries = [], []
    for prof, child in zip(profiles, utt_seed.spawn(n_speakers)):
        rng = np.random.default_rng(child)
        for u in range(utts_per_speaker):
            waves.append(_synth_utterance(prof, style, rng))
            entries.append(ManifestEntry(f"wav/{prof.speaker_id}_{u:03d}.wav", prof.speaker_id, prof.label, prof.split))
    return waves, entries


def _assign_splits(labels, fractions, rng) -> list[str]:
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or fractions.sum() <= 0:
        raise ValueError("split_fractions must be three non-negative numbers")
    fractions = fractions / fractions.sum()
    out = ["train"] * len(labels)
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    for members in groups.values():
        members = list(rng.permutation(members))
        n = len(members)
        n_test = int(round(fractions[2] * n))
        n_val = int(round(fractions[1] * n))
        for i in members[:n_test]:
            out[i] = "test"
        for i in members[n_test : n_test + n_val]:
            out[i] = "validation"
    return out


# -- segmentation -----------------------------------------------------------------


def _frames(spec) -> np.ndarray:
    return spec.frames if isinstance(spec, MelSpectrogram) else np.asarray(spec)


def concat_and_segment(features_by_speaker: Mapping[str, Sequence[MelSpectrogram]],
                       segment_len: int = SEGMENT_LEN,
                       labels: Mapping[str, int | None] | None = None,
                       utterance_ids: Mapping[str, Sequence[str]] | None = None) -> list[Segment]:
    """Concatenate each speaker's utterances in time, then cut non-overlapping windows.

    The trailing remainder shorter than ``segment_len`` is dropped.  Segments
    carry ``utterance_id`` = speaker id (the concatenated stream) and their
    position in ``segment_index``; ``provenance`` records which frames of
    which source utterance each segment covers (ids default to
    ``"<speaker>#<k>"``).
    """
    out: list[Segment] = []
    for spk, specs in features_by_speaker.items():
        if not specs:
            continue
        arrays = [_frames(s) for s in specs]
        ids = list(utterance_ids[spk]) if utterance_ids else [f"{spk}#{k}" for k in range(len(arrays))]
        stream = np.concatenate(arrays, axis=0)
        bounds = np.cumsum([0] + [a.shape[0] for a in arrays])
        count = stream.shape[0] // segment_len
        if count == 0:
            log.info("speaker %s has %d frames (< %d); no segments", spk, stream.shape[0], segment_len)
        label = labels.get(spk) if labels else None
        for k in range(count):
            lo, hi = k * segment_len, (k + 1) * segment_len
            pieces = []
            for u in range(len(arrays)):
                a, b = max(lo, bounds[u]), min(hi, bounds[u + 1])
                if a < b:
                    pieces.append((ids[u], int(a - bounds[u]), int(b - bounds[u])))
            chunk = stream[lo:hi]
            out.append(Segment(np.ascontiguousarray(chunk.T, dtype=np.float32), spk, spk, label, None, k,
                               tuple(pieces)))
    return out


def segment_utterance(utt: Utterance, segment_len: int = SEGMENT_LEN) -> list[Segment]:
    frames = _frames(utt.features)
    count = frames.shape[0] // segment_len
    offset = utt.frame_offset
    return [
        Segment(np.ascontiguousarray(frames[k * segment_len : (k + 1) * segment_len].T, dtype=np.float32),
                utt.utterance_id, utt.speaker_id, utt.label, None, k,
                ((utt.utterance_id, offset + k * segment_len, offset + (k + 1) * segment_len),))
        for k in range(count)
    ]


def min_frames(utterances: Iterable[Utterance]) -> int:
    return min(_frames(u.features).shape[0] for u in utterances)


def random_crop_and_subsample(utterances: Sequence[Utterance], seed: int, crop_len: int | None = None,
                              segment_len: int = SEGMENT_LEN) -> list[Segment]:
    """Crop every utterance to a common length, segment, then class-balance.

    ``crop_len`` defaults to the shortest utterance in ``utterances``; pass
    the training-split minimum explicitly when cropping other splits.  Each
    crop starts at a seeded random offset.  The result holds
    ``min(class counts)`` segments per class drawn without replacement, in
    shuffled order.
    """
    labels = {u.label for u in utterances}
    if not {0, 1} <= labels:
        raise ClassExhaustedError("class exhausted: need at least one utterance per class")
    rng = np.random.default_rng(seed)
    crop_len = min_frames(utterances) if crop_len is None else crop_len
    pools: dict[int, list[Segment]] = {0: [], 1: []}
    for utt in utterances:
        frames = _frames(utt.features)
        start = int(rng.integers(0, frames.shape[0] - crop_len + 1)) if frames.shape[0] > crop_len else 0
        cropped = Utterance(utt.utterance_id, utt.speaker_id, utt.label,
                            MelSpectrogram(frames[start : start + crop_len]), utt.split,
                            utt.frame_offset + start)
        pools[utt.label].extend(segment_utterance(cropped, segment_len))
    k = min(len(pools[0]), len(pools[1]))
    if k == 0:
        empty = [c for c in (0, 1) if not pools[c]]
        raise ClassExhaustedError(f"class exhausted: no segments for class {empty[0]} after cropping to {crop_len} frames")
    chosen = []
    for c in (0, 1):
        idx = rng.choice(len(pools[c]), size=k, replace=False)
        chosen.extend(pools[c][i] for i in idx)
    order = rng.permutation(len(chosen))
    return [chosen[i] for i in order]
