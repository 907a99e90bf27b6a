"""Log-mel front end: 64 ms Hann window, 32 ms hop, 40 mel bands at 16 kHz."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
WIN = 1024  # 64 ms
HOP = 512  # 32 ms
N_FFT = 1024
N_MELS = 40
LOG_FLOOR = 1e-10


@dataclass
class MelSpectrogram:
    """T x 40 natural-log mel energies (rows are frames)."""

    frames: np.ndarray
    hop_ms: int = 32
    win_ms: int = 64
    n_mels: int = N_MELS

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_mels:
            raise ValueError(f"expected T x {self.n_mels} frames, got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def n_frames(num_samples: int, win: int = WIN, hop: int = HOP) -> int:
    if num_samples < win:
        return 0
    return (num_samples - win) // hop + 1


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window, w[k] = 0.5 - 0.5 cos(2 pi k / (n - 1))."""
    if n < 2:
        raise ValueError("hann window needs n >= 2")
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(samples: np.ndarray, win: int = WIN, hop: int = HOP) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < win:
        raise ValueError(f"waveform shorter than one window ({samples.size} < {win} samples)")
    t = n_frames(samples.size, win, hop)
    return np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:t]


def stft_power(samples, win: int = WIN, hop: int = HOP) -> np.ndarray:
    """|X[k]|^2 for k = 0..win/2 of each Hann-windowed frame; shape T x (win/2 + 1).

    Unnormalised forward DFT, X[k] = sum_n x[n] w[n] exp(-2 pi i k n / win).
    """
    samples = getattr(samples, "samples", samples)
    frames = frame_signal(samples, win, hop) * hann_window(win)
    spec = np.fft.rfft(frames, n=win, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(n_mels: int = N_MELS, f_min: float = 0.0, f_max: float = 8000.0) -> np.ndarray:
    """n_mels + 2 band edges in Hz, equally spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def mel_filterbank(n_mels: int = N_MELS, n_fft_bins: int = N_FFT // 2 + 1, f_min: float = 0.0,
                   f_max: float = 8000.0, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Area-normalised triangular filters, shape n_mels x n_fft_bins."""
    nyquist = sample_rate / 2
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not (0.0 <= f_min < f_max <= nyquist):
        raise ValueError(f"invalid frequency range [{f_min}, {f_max}] for Nyquist {nyquist}")
    fft_freqs = np.linspace(0.0, nyquist, n_fft_bins)
    edges = mel_points(n_mels, f_min, f_max)
    fb = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling)) * (2.0 / (hi - lo))
    return fb


_FILTERBANK = mel_filterbank()


def extract_log_mel(wave) -> MelSpectrogram:
    """ln(filterbank @ power + 1e-10) per frame."""
    samples = getattr(wave, "samples", wave)
    rate = getattr(wave, "sample_rate_hz", SAMPLE_RATE)
    if rate != SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {rate}")
    power = stft_power(samples)
    mel = power @ _FILTERBANK.T
    return MelSpectrogram(np.log(mel + LOG_FLOOR).astype(np.float32))


# -- feature cache: u32 T, u32 n_mels, then float32 LE row-major T x n_mels --------


def write_feature_cache(path, spec: MelSpectrogram) -> None:
    frames = np.ascontiguousarray(spec.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", frames.shape[0], frames.shape[1]))
        fh.write(frames.tobytes())


def read_feature_cache(path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated feature header")
    t, n_mels = struct.unpack("<II", raw[:8])
    expected = 8 + 4 * t * n_mels
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size {len(raw)} != {expected}")
    frames = np.frombuffer(raw, dtype="<f4", offset=8).reshape(t, n_mels).astype(np.float32)
    return MelSpectrogram(frames, n_mels=n_mels)
