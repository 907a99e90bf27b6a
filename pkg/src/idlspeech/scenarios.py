"""Desk-scale synthetic experiments shared by the acceptance tests and the demos.

Every function here is seeded end to end; nothing touches the filesystem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .augment import augment_segment
from .checkpoint import Checkpoint
from .corpus import Segment, Utterance, concat_and_segment, synth_corpus
from .dsp import MelSpectrogram, extract_log_mel
from .nn import init_params
from .probe import run_probe
from .sampling import assign_pseudo_labels, kmeans_fit
from .train import TrainConfig, embed_segments, evaluate, finetune_ensemble, pretrain


def synth_segments(n_speakers: int, utts_per_speaker: int, seed: int, prefix: str = "spk") -> list[Segment]:
    """Unlabelled synthetic speakers cut into 120-frame segments per speaker."""
    waves, entries = synth_corpus(n_speakers, utts_per_speaker, seed=seed, speaker_prefix=prefix)
    by_speaker: dict[str, list] = {}
    for wave, entry in zip(waves, entries):
        by_speaker.setdefault(entry.speaker_id, []).append(extract_log_mel(wave))
    return concat_and_segment(by_speaker)


def synth_sessions(n_speakers: int, utts_per_speaker: int, seed: int, prefix: str = "dn",
                   depressed_fraction: float = 0.5) -> list[Utterance]:
    """Labelled synthetic speakers, one concatenated session per speaker."""
    waves, entries = synth_corpus(n_speakers, utts_per_speaker, seed=seed, speaker_prefix=prefix,
                                  labeled=True, depressed_fraction=depressed_fraction)
    frames: dict[tuple[str, int], list[np.ndarray]] = {}
    for wave, entry in zip(waves, entries):
        frames.setdefault((entry.speaker_id, entry.label), []).append(extract_log_mel(wave).frames)
    return [Utterance(spk, spk, label, MelSpectrogram(np.concatenate(fr))) for (spk, label), fr in frames.items()]


def augment_gap(params, pool: list[Segment], kind: str = "tm", seed: int = 0) -> tuple[float, float]:
    """(mean <f_i, f^_i>, mean <f_i, f_j> over i != j), embeddings in inference mode."""
    f = embed_segments(params, pool)
    aug = [Segment(augment_segment(s, kind, seed + i), s.utterance_id, s.speaker_id) for i, s in enumerate(pool)]
    f_hat = embed_segments(params, aug)
    gram = f @ f.T
    m = len(pool)
    return float(np.mean(np.sum(f * f_hat, axis=1))), float((gram.sum() - np.trace(gram)) / (m * (m - 1)))


def mean_probe_accuracy(params, segments: list[Segment], splits: int = 5) -> float:
    """Speaker-probe accuracy averaged over ``splits`` seeded 70/30 splits."""
    emb = embed_segments(params, segments)
    ids = [s.speaker_id for s in segments]
    return float(np.mean([run_probe(emb, ids, seed=k)[0] for k in range(splits)]))


@dataclass(frozen=True)
class ToyPretraining:
    """The 10-speaker pre-training pool plus a 3-speaker validation pool."""

    n_speakers: int = 10
    utts_per_speaker: int = 12
    corpus_seed: int = 11
    val_seed: int = 12
    epochs: int = 30
    batch_size: int = 10
    lr0: float = 1e-3
    augment: str = "tm"

    def pools(self) -> tuple[list[Segment], list[Segment]]:
        return (synth_segments(self.n_speakers, self.utts_per_speaker, self.corpus_seed, "pre"),
                synth_segments(3, 10, self.val_seed, "val"))

    def config(self, strategy: str, seed: int) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr0=self.lr0,
                           strategy=strategy, augment=self.augment, seed=seed)

    def run(self, strategy: str, seed: int, pools=None, init=None) -> Checkpoint:
        pool, val = pools if pools is not None else self.pools()
        return pretrain(pool, self.config(strategy, seed), val_pool=val, init=init)

    def run_pis(self, stage1: Checkpoint, seed: int, pools=None) -> Checkpoint:
        """Cluster the pool with the stage-1 model (C = batch size) and continue with PIS."""
        pool, val = pools if pools is not None else self.pools()
        emb = embed_segments(stage1.params, pool)
        labelled = [replace(s) for s in pool]
        assign_pseudo_labels(labelled, kmeans_fit(emb, self.batch_size, seed), embeddings=emb)
        return self.run("PIS", seed, (labelled, val), init=stage1.params.copy())


def probe_ordering(seed: int, toy: ToyPretraining = ToyPretraining(), probe_speakers: int = 10,
                   probe_seed: int = 14) -> dict[str, float]:
    """Probe accuracy on unseen speakers for DS-, RS-pretrained and untrained networks.

    The untrained network is ``init_params(seed)``, the same starting point
    that both pre-training runs use.
    """
    pools = toy.pools()
    probe_set = synth_segments(probe_speakers, toy.utts_per_speaker, probe_seed, "new")
    out = {"random": mean_probe_accuracy(init_params(seed), probe_set)}
    for strategy in ("DS", "RS"):
        out[strategy] = mean_probe_accuracy(toy.run(strategy, seed, pools).params, probe_set)
    return out


@dataclass(frozen=True)
class ToyDownstream:
    """Single-model fine-tuning (profile B) on a small balanced labelled task."""

    train_speakers: int = 16
    test_speakers: int = 16
    utts_per_speaker: int = 8
    epochs: int = 100
    batch_size: int = 20
    lr0: float = 1e-2

    def sessions(self, seed: int) -> tuple[list[Utterance], list[Utterance]]:
        return (synth_sessions(self.train_speakers, self.utts_per_speaker, 1000 + seed, "tr"),
                synth_sessions(self.test_speakers, self.utts_per_speaker, 2000 + seed, "te"))

    def f1(self, init, train: list[Utterance], test: list[Utterance], seed: int) -> float:
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr0=self.lr0, seed=seed)
        return evaluate(finetune_ensemble(train, init, cfg, k_models=1, profile="B"), test).f1_avg


def downstream_f1(seed: int, toy: ToyPretraining = ToyPretraining(),
                  down: ToyDownstream = ToyDownstream()) -> dict[str, float]:
    """f1_avg of the no-pre-training baseline, DS and two-stage PIS initialisations."""
    pools = toy.pools()
    train, test = down.sessions(seed)
    ds = toy.run("DS", seed, pools)
    pis = toy.run_pis(ds, seed, pools)
    return {name: down.f1(init, train, test, seed) for name, init in
            (("baseline", None), ("DS", ds), ("PIS", pis))}
