"""
Log-mel features and the six augmentations
==========================================

Synthesise a few speakers, turn each recording into 40-band log-mel frames,
cut 120-frame segments and look at what every augmentation does to one of them.
"""

import numpy as np

from idlspeech.augment import AugmentKind, add_noise, augment_segment, perturb_volume
from idlspeech.corpus import concat_and_segment, synth_corpus
from idlspeech.dsp import extract_log_mel

# three speakers, four short recordings each, 16 kHz mono
waves, entries = synth_corpus(3, 4, seed=0)
print(len(waves), "recordings,", round(sum(w.duration_s for w in waves), 1), "seconds of audio")

# 64 ms Hann windows every 32 ms, 40 mel bands, natural log
feats = [extract_log_mel(w) for w in waves]
print("first recording:", feats[0].frames.shape, "(frames x bands)")

# each speaker's recordings are concatenated and cut into 40 x 120 instances
by_speaker = {}
for e, f in zip(entries, feats):
    by_speaker.setdefault(e.speaker_id, []).append(f)
segments = concat_and_segment(by_speaker)
print(len(segments), "segments of shape", segments[0].features.shape)

# feature-level augmentations act on the segment directly
seg = segments[0]
for kind in (AugmentKind.TIME_MASK, AugmentKind.FREQ_MASK, AugmentKind.SPEC_AUGMENT):
    out = augment_segment(seg, kind, seed=1)
    changed = np.mean(out != seg.features)
    print(f"{kind.value:8s} changed {changed:.1%} of the cells")

# signal-level ones act on the waveform before feature extraction
noisy = add_noise(waves[0], snr_db=10.0, seed=1)
louder = perturb_volume(waves[0], gain=2.0)
base = extract_log_mel(waves[0]).frames
print("noise at 10 dB SNR, mean log-mel change:", round(float(np.mean(extract_log_mel(noisy).frames - base)), 3))
# a gain of 2 scales power by 4, i.e. adds log(4) ~ 1.386 wherever the floor is not hit
print("volume x2, median log-mel change:", round(float(np.median(extract_log_mel(louder).frames - base)), 3))
