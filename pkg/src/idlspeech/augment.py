"""Signal-level and feature-level augmentations.

Signal level: additive noise, volume perturbation, and a VTLP-style warp of
the linear power spectrum.  Feature level (on 40 x 120 log-mel segments):
time masking, frequency masking and SpecAugment (time warp + one time mask +
one frequency mask).  Every function is a pure function of its inputs and
``seed``.
"""

from __future__ import annotations

import enum
from typing import Callable, Mapping

import numpy as np

from . import dsp
from .corpus import Segment, Waveform

T_MAX = 25
F_MAX = 8
WARP_W = 5


class AugmentKind(str, enum.Enum):
    NOISE = "noise"
    VOLUME = "volume"
    VTLP = "vtlp"
    TIME_MASK = "tm"
    FREQ_MASK = "fm"
    SPEC_AUGMENT = "specaug"

    @property
    def signal_level(self) -> bool:
        return self in (AugmentKind.NOISE, AugmentKind.VOLUME, AugmentKind.VTLP)


def _samples(wave) -> np.ndarray:
    return wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)


def _rewrap(wave, samples):
    return Waveform(samples, wave.sample_rate_hz) if isinstance(wave, Waveform) else samples


# -- signal level -----------------------------------------------------------------


def add_noise(wave, snr_db: float | None = None, seed: int = 0):
    """Add white Gaussian noise at exactly ``snr_db`` (drawn from U[10, 30] if None)."""
    x = _samples(wave)
    p_signal = float(np.mean(x**2))
    if p_signal == 0.0:
        raise ValueError("cannot set an SNR on a zero-energy signal")
    rng = np.random.default_rng(seed)
    if snr_db is None:
        snr_db = rng.uniform(10.0, 30.0)
    if np.isposinf(snr_db):
        return _rewrap(wave, x.copy())
    noise = rng.standard_normal(x.size)
    noise *= np.sqrt(p_signal / 10 ** (snr_db / 10) / np.mean(noise**2))
    return _rewrap(wave, x + noise)


def perturb_volume(wave, gain: float | None = None, seed: int = 0):
    """Scale by ``gain`` (drawn from U[0.5, 2.0] if None) and clip to [-1, 1]."""
    if gain is None:
        gain = np.random.default_rng(seed).uniform(0.5, 2.0)
    if gain <= 0:
        raise ValueError("gain must be positive")
    return _rewrap(wave, np.clip(_samples(wave) * gain, -1.0, 1.0))


def vtlp_map(freqs: np.ndarray, alpha: float, f_max: float) -> np.ndarray:
    """Piecewise-linear warp: alpha*f below the boundary, then a line to (f_max, f_max)."""
    f_b = f_max * min(alpha, 1.0) / alpha * 7.0 / 8.0
    upper = alpha * f_b + (f_max - alpha * f_b) * (freqs - f_b) / (f_max - f_b)
    return np.where(freqs <= f_b, alpha * freqs, upper)


def vtlp_warp(power_spec: np.ndarray, alpha: float | None = None, seed: int = 0,
              f_max: float = dsp.SAMPLE_RATE / 2) -> np.ndarray:
    """Move energy at frequency f to g(f) along the last axis (T x bins in, same shape out)."""
    if alpha is None:
        alpha = np.random.default_rng(seed).uniform(0.9, 1.1)
    if not 0.5 < alpha < 2.0:
        raise ValueError(f"alpha {alpha} outside (0.5, 2.0)")
    spec = np.asarray(power_spec, dtype=np.float64)
    freqs = np.linspace(0.0, f_max, spec.shape[-1])
    # output bin j reads the input at g^-1(f_j); g is strictly increasing
    src = np.interp(freqs, vtlp_map(freqs, alpha, f_max), freqs)
    pos = src / f_max * (spec.shape[-1] - 1)
    lo = np.clip(np.floor(pos).astype(int), 0, spec.shape[-1] - 2)
    frac = pos - lo
    return spec[..., lo] * (1.0 - frac) + spec[..., lo + 1] * frac


def log_mel_from_power(power: np.ndarray) -> np.ndarray:
    return np.log(power @ dsp._FILTERBANK.T + dsp.LOG_FLOOR).astype(np.float32)


# -- feature level ----------------------------------------------------------------


def apply_time_mask(seg: np.ndarray, t0: int, t: int) -> np.ndarray:
    out = np.array(seg, copy=True)
    if t > 0:
        out[:, t0 : t0 + t] = seg.mean()
    return out


def apply_freq_mask(seg: np.ndarray, f0: int, f: int) -> np.ndarray:
    out = np.array(seg, copy=True)
    if f > 0:
        out[f0 : f0 + f, :] = seg.mean()
    return out


def draw_mask(length: int, max_width: int, rng: np.random.Generator) -> tuple[int, int]:
    """(start, width) with width ~ U{0..max_width}, start ~ U{0..length-width}."""
    width = int(rng.integers(0, max_width + 1))
    start = int(rng.integers(0, length - width + 1))
    return start, width


def time_mask(seg: np.ndarray, t_max: int = T_MAX, seed: int = 0) -> np.ndarray:
    """Replace a random run of up to ``t_max`` frames with the segment mean."""
    n_frames = seg.shape[1]
    if not 0 <= t_max <= n_frames:
        raise ValueError(f"t_max must lie in [0, {n_frames}]")
    t0, t = draw_mask(n_frames, t_max, np.random.default_rng(seed))
    return apply_time_mask(seg, t0, t)


def freq_mask(seg: np.ndarray, f_max: int = F_MAX, seed: int = 0) -> np.ndarray:
    """Replace a random band of up to ``f_max`` mel bins with the segment mean."""
    n_bins = seg.shape[0]
    if not 0 <= f_max <= n_bins:
        raise ValueError(f"f_max must lie in [0, {n_bins}]")
    f0, f = draw_mask(n_bins, f_max, np.random.default_rng(seed))
    return apply_freq_mask(seg, f0, f)


def apply_time_warp(seg: np.ndarray, centre: int, shift: int) -> np.ndarray:
    """Move frame ``centre`` to ``centre + shift``, stretching both sides linearly."""
    if shift == 0:
        return np.array(seg, copy=True)
    n = seg.shape[1]
    last = n - 1
    target = centre + shift
    t = np.arange(n, dtype=np.float64)
    src = np.where(t <= target, t * centre / target, centre + (t - target) * (last - centre) / (last - target))
    lo = np.clip(np.floor(src).astype(int), 0, n - 2)
    frac = src - lo
    return (seg[:, lo] * (1.0 - frac) + seg[:, lo + 1] * frac).astype(seg.dtype)


def spec_augment(seg: np.ndarray, seed: int = 0, warp: int = WARP_W, t_max: int = T_MAX,
                 f_max: int = F_MAX) -> np.ndarray:
    """Time warp, then one time mask, then one frequency mask."""
    warp_seed, tm_seed, fm_seed = np.random.SeedSequence(seed).generate_state(3)
    rng = np.random.default_rng(warp_seed)
    n = seg.shape[1]
    centre = int(rng.integers(warp + 1, n - warp - 1))
    shift = int(rng.integers(-warp, warp + 1))
    out = apply_time_warp(seg, centre, shift)
    out = time_mask(out, t_max, int(tm_seed))
    return freq_mask(out, f_max, int(fm_seed))


FEATURE_AUGMENTS: dict[AugmentKind, Callable[[np.ndarray, int], np.ndarray]] = {
    AugmentKind.TIME_MASK: lambda s, seed: time_mask(s, T_MAX, seed),
    AugmentKind.FREQ_MASK: lambda s, seed: freq_mask(s, F_MAX, seed),
    AugmentKind.SPEC_AUGMENT: lambda s, seed: spec_augment(s, seed),
}


def augment_segment(seg: Segment, kind: AugmentKind | str, seed: int,
                    audio: Mapping[str, Waveform] | None = None) -> np.ndarray:
    """One augmented copy of ``seg.features`` (40 x 120).

    Signal-level kinds re-render the segment from the source audio named in
    ``seg.provenance``; each piece is augmented and re-analysed separately so
    the frame grid matches the original segment exactly.
    """
    kind = AugmentKind(kind)
    if not kind.signal_level:
        return FEATURE_AUGMENTS[kind](seg.features, seed)
    if audio is None or not seg.provenance:
        raise ValueError(f"{kind.value} augmentation needs source audio and segment provenance")
    pieces = []
    for k, (utt_id, first, end) in enumerate(seg.provenance):
        samples = audio[utt_id].samples
        chunk = samples[first * dsp.HOP : (end - 1) * dsp.HOP + dsp.WIN]
        piece_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        if kind is AugmentKind.VTLP:
            # one warp factor per segment, shared by its pieces
            alpha = np.random.default_rng(seed).uniform(0.9, 1.1)
            pieces.append(log_mel_from_power(vtlp_warp(dsp.stft_power(chunk), alpha)))
            continue
        if kind is AugmentKind.NOISE:
            snr = np.random.default_rng(seed).uniform(10.0, 30.0)
            chunk = add_noise(chunk, snr, piece_seed) if np.any(chunk) else chunk
        else:
            gain = np.random.default_rng(seed).uniform(0.5, 2.0)
            chunk = perturb_volume(chunk, gain)
        pieces.append(dsp.extract_log_mel(chunk).frames)
    out = np.concatenate(pieces, axis=0).T
    if out.shape != seg.features.shape:
        raise ValueError(f"re-rendered segment has shape {out.shape}, expected {seg.features.shape}")
    return np.ascontiguousarray(out, dtype=np.float32)
