"""Glue between a manifest on disk and the in-memory pools the trainers consume.

Pre-training pools concatenate each speaker's recordings before cutting
segments.  Downstream "sessions" concatenate a speaker's recordings within
one split into a single labelled utterance, the unit the classifier and the
F1 metric operate on.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import dsp
from .corpus import (
    ManifestEntry,
    Segment,
    Utterance,
    Waveform,
    concat_and_segment,
    decode_wav,
    encode_wav,
    resolve_audio_path,
    write_manifest,
)


def feature_path(cache_dir, entry: ManifestEntry) -> Path:
    return Path(cache_dir) / f"{entry.utterance_id}.feat"


def extract_features(manifest_path, entries: Sequence[ManifestEntry], cache_dir) -> dict[str, dsp.MelSpectrogram]:
    """Decode every entry, extract log-mel features and write them to ``cache_dir``."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    out = {}
    for e in entries:
        spec = dsp.extract_log_mel(decode_wav(resolve_audio_path(manifest_path, e)).samples)
        dsp.write_feature_cache(feature_path(cache_dir, e), spec)
        out[e.utterance_id] = spec
    return out


def load_features(entries: Sequence[ManifestEntry], cache_dir) -> dict[str, dsp.MelSpectrogram]:
    missing = [e.path for e in entries if not feature_path(cache_dir, e).exists()]
    if missing:
        raise FileNotFoundError(f"feature cache {cache_dir} lacks {len(missing)} entries, e.g. {missing[0]}")
    return {e.utterance_id: dsp.read_feature_cache(feature_path(cache_dir, e)) for e in entries}


def load_audio(manifest_path, entries: Sequence[ManifestEntry]) -> dict[str, Waveform]:
    return {e.utterance_id: decode_wav(resolve_audio_path(manifest_path, e)) for e in entries}


def select(entries: Iterable[ManifestEntry], splits: Sequence[str] | str) -> list[ManifestEntry]:
    splits = (splits,) if isinstance(splits, str) else tuple(splits)
    return [e for e in entries if e.split in splits]


def pretrain_pool(entries: Sequence[ManifestEntry], features: Mapping[str, dsp.MelSpectrogram]) -> list[Segment]:
    """Per-speaker concatenation and segmentation; provenance names the source recordings."""
    by_spk: dict[str, list] = {}
    ids: dict[str, list] = {}
    for e in entries:
        by_spk.setdefault(e.speaker_id, []).append(features[e.utterance_id])
        ids.setdefault(e.speaker_id, []).append(e.utterance_id)
    return concat_and_segment(by_spk, utterance_ids=ids)


def sessions(entries: Sequence[ManifestEntry], features: Mapping[str, dsp.MelSpectrogram]) -> list[Utterance]:
    """One labelled utterance per (speaker, split): the speaker's recordings in manifest order."""
    groups: dict[tuple[str, str], list[ManifestEntry]] = {}
    for e in entries:
        groups.setdefault((e.speaker_id, e.split), []).append(e)
    n_splits: dict[str, int] = {}
    for spk, _ in groups:
        n_splits[spk] = n_splits.get(spk, 0) + 1
    out = []
    for (spk, split), members in groups.items():
        labels = {m.label for m in members}
        if len(labels) != 1 or None in labels:
            raise ValueError(f"speaker {spk} in split {split} needs one integer label, got {sorted(map(str, labels))}")
        frames = np.concatenate([features[m.utterance_id].frames for m in members])
        utt_id = spk if n_splits[spk] == 1 else f"{spk}@{split}"
        out.append(Utterance(utt_id, spk, labels.pop(),
                             dsp.MelSpectrogram(frames), split=split))
    return out


def write_corpus(out_dir, waves: Sequence[Waveform], entries: Sequence[ManifestEntry]) -> Path:
    """Write WAVs under ``out_dir`` plus ``manifest.jsonl`` with relative paths."""
    out_dir = Path(out_dir)
    for w, e in zip(waves, entries):
        path = out_dir / e.path
        path.parent.mkdir(parents=True, exist_ok=True)
        encode_wav(path, w)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest
