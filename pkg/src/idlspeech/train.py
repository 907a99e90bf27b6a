"""Pre-training with the instance-discrimination loss, downstream fine-tuning and evaluation."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .augment import AugmentKind, augment_segment
from .checkpoint import Checkpoint
from .corpus import Segment, Utterance, Waveform, random_crop_and_subsample, segment_utterance
from .loss import idl_loss
from .nn.autodiff import Tensor, mean, mul, no_grad, softplus, sub
from .nn.depaudionet import DepAudioNetParams, embed, init_params, logits
from .nn.optim import lr_at_epoch, sgd_step
from .sampling import make_plan, sample_rs

log = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 20
    lr0: float = 1e-3
    decay: float = 0.9
    decay_every: int = 2
    tau: float = 10.0
    strategy: str = "DS"
    augment: str = "tm"
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0 or self.decay <= 0 or self.tau <= 0:
            raise ValueError("learning rate, decay and tau must be positive")
        self.strategy = self.strategy.upper()
        self.augment = AugmentKind(self.augment).value

    def lr(self, epoch: int) -> float:
        return lr_at_epoch(self.lr0, epoch, self.decay, self.decay_every)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def stack_features(segments: Sequence[Segment], dtype=np.float32) -> np.ndarray:
    return np.stack([s.features for s in segments]).astype(dtype, copy=False)


def split_by_speaker(pool: Sequence[Segment], val_fraction: float, seed: int
                     ) -> tuple[list[Segment], list[Segment]]:
    """Speaker-disjoint train/validation split; at least one speaker each side when possible."""
    speakers = sorted({s.speaker_id for s in pool})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(speakers))
    n_val = int(round(val_fraction * len(speakers)))
    if len(speakers) > 1:
        n_val = min(max(n_val, 1), len(speakers) - 1)
    val_spk = {speakers[i] for i in order[:n_val]}
    train = [s for s in pool if s.speaker_id not in val_spk]
    val = [s for s in pool if s.speaker_id in val_spk]
    return train, val


def embed_segments(params: DepAudioNetParams, segments: Sequence[Segment], chunk: int = 64) -> np.ndarray:
    """Inference-mode unit-norm embeddings, (m, 128) float64."""
    out = []
    with no_grad():
        for i in range(0, len(segments), chunk):
            x = Tensor(stack_features(segments[i : i + chunk], params.dtype))
            out.append(embed(x, params, train=False).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, 128))


def segment_probabilities(params: DepAudioNetParams, segments: Sequence[Segment], chunk: int = 64) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(segments), chunk):
            x = Tensor(stack_features(segments[i : i + chunk], params.dtype))
            z = logits(x, params, train=False).data.astype(np.float64)
            out.append(0.5 * (1.0 + np.tanh(0.5 * z)))
    return np.concatenate(out) if out else np.zeros(0)


# -- pre-training -------------------------------------------------------------------


def _augmented(batch: Sequence[Segment], kind: str, seeds: Sequence[int], audio) -> np.ndarray:
    return np.stack([augment_segment(s, kind, sd, audio) for s, sd in zip(batch, seeds)])


def idl_batch_loss(params: DepAudioNetParams, x: np.ndarray, x_aug: np.ndarray, tau: float,
                   train: bool, dropout_seed: int = 0) -> Tensor:
    """Embed originals and augmented copies in one pass and score them."""
    n = x.shape[0]
    both = Tensor(np.concatenate([x, x_aug]).astype(params.dtype, copy=False))
    rng = np.random.default_rng(dropout_seed) if train else None
    f = embed(both, params, train=train, rng=rng)
    return idl_loss(f[:n], f[n:], tau)


def _validation_batches(val_pool: Sequence[Segment], cfg: TrainConfig, audio) -> list[tuple[np.ndarray, np.ndarray]]:
    if len(val_pool) < 2:
        return []
    n = min(cfg.batch_size, len(val_pool))
    plan = sample_rs(val_pool, n, _seed(cfg.seed, 0x7A1))
    out = []
    for b, idx in enumerate(plan.batches):
        batch = [val_pool[i] for i in idx]
        seeds = [_seed(cfg.seed, 0x7A1, b, k) for k in range(len(batch))]
        out.append((stack_features(batch), _augmented(batch, cfg.augment, seeds, audio)))
    return out


def pretrain(pool: Sequence[Segment], cfg: TrainConfig, val_pool: Sequence[Segment] | None = None,
             audio: Mapping[str, Waveform] | None = None, init: DepAudioNetParams | None = None,
             on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Instance-discrimination pre-training; returns the lowest-validation-loss checkpoint.

    When ``val_pool`` is None the pool is split 9:1 by speaker.  Validation
    batches are fixed random-sampling batches with fixed augmentation draws,
    scored in inference mode.  ``meta["loss_curve"]`` holds one row per epoch.
    """
    if val_pool is None:
        pool, val_pool = split_by_speaker(pool, cfg.val_fraction, cfg.seed)
    pool, val_pool = list(pool), list(val_pool)
    params = init.copy() if init is not None else init_params(cfg.seed)
    val_batches = _validation_batches(val_pool, cfg, audio)

    curve = []
    best = None
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        plan = make_plan(cfg.strategy, pool, cfg.batch_size, _seed(cfg.seed, epoch))
        losses = []
        for b, idx in enumerate(plan.batches):
            batch = [pool[i] for i in idx]
            seeds = [_seed(cfg.seed, epoch, b, k) for k in range(len(batch))]
            x_aug = _augmented(batch, cfg.augment, seeds, audio)
            params.zero_grad()
            loss = idl_batch_loss(params, stack_features(batch), x_aug, cfg.tau, True, _seed(cfg.seed, epoch, b))
            loss.backward()
            sgd_step(params, lr)
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        if val_batches:
            with no_grad():
                val_loss = float(np.mean([idl_batch_loss(params, x, xa, cfg.tau, False).item()
                                          for x, xa in val_batches]))
        else:
            val_loss = train_loss
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
        curve.append(row)
        log.info("pretrain %s epoch %d train %.5f val %.5f", cfg.strategy, epoch, train_loss, val_loss)
        if on_epoch:
            on_epoch(row)
        if best is None or val_loss < best[1]:
            best = (epoch, val_loss, params.copy())
    epoch, val_loss, best_params = best
    meta = {"stage": "pretrain", "config": cfg.to_dict(), "epoch": epoch, "val_loss": val_loss,
            "loss_curve": curve}
    return Checkpoint(best_params, meta)


# -- downstream -----------------------------------------------------------------------


def bce_with_logits(z: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, softplus(z) - y*z."""
    return mean(sub(softplus(z), mul(z, y.astype(z.dtype))))


def train_classifier(segments: Sequence[Segment], params: DepAudioNetParams, cfg: TrainConfig,
                     seed: int) -> list[float]:
    """Fine-tune all layers on segment labels with BCE; returns per-epoch mean loss."""
    x_all = stack_features(segments, params.dtype)
    y_all = np.array([s.label for s in segments], dtype=np.float64)
    n = len(segments)
    bs = min(cfg.batch_size, n)
    curve = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        order = np.random.default_rng(_seed(seed, epoch)).permutation(n)
        losses = []
        for b in range(max(n // bs, 1)):
            idx = order[b * bs : (b + 1) * bs]
            if len(idx) < 2:
                continue
            params.zero_grad()
            rng = np.random.default_rng(_seed(seed, epoch, b))
            loss = bce_with_logits(logits(Tensor(x_all[idx]), params, train=True, rng=rng), y_all[idx])
            loss.backward()
            sgd_step(params, lr)
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
    return curve


def finetune_ensemble(train_utts: Sequence[Utterance], init: Checkpoint | DepAudioNetParams | None,
                      cfg: TrainConfig, k_models: int = 5, profile: str = "A") -> list[Checkpoint]:
    """Profile A: ``k_models`` models, each on a balanced crop/sub-sample drawn with seed+m.
    Profile B: a single model on every segment of every utterance.

    ``init=None`` trains from random initialisation (the no-pre-training baseline).
    """
    profile = profile.upper()
    init_params_ = init.params if isinstance(init, Checkpoint) else init
    if profile == "A":
        subsets = [(m, random_crop_and_subsample(train_utts, cfg.seed + m)) for m in range(k_models)]
    elif profile == "B":
        segs = [s for u in train_utts for s in segment_utterance(u)]
        subsets = [(0, segs)]
    else:
        raise ValueError(f"unknown profile {profile!r}")
    out = []
    for m, segs in subsets:
        params = init_params_.copy() if init_params_ is not None else init_params(cfg.seed + m)
        curve = train_classifier(segs, params, cfg, _seed(cfg.seed, m, 0xF1))
        meta = {"stage": "finetune", "profile": profile, "member": m, "config": cfg.to_dict(),
                "epoch": cfg.epochs - 1, "train_curve": curve, "n_segments": len(segs),
                "pretrained": init_params_ is not None}
        out.append(Checkpoint(params, meta))
    return out


def predict_utterance(models: Sequence[Checkpoint | DepAudioNetParams], utterance) -> float:
    """Mean segment probability over all models and all 120-frame windows."""
    if not models:
        raise ValueError("need at least one model")
    utt = utterance if isinstance(utterance, Utterance) else Utterance("utt", "spk", None, utterance)
    segs = segment_utterance(utt)
    if not segs:
        raise ValueError(f"utterance {utt.utterance_id} is shorter than one segment")
    probs = [segment_probabilities(m.params if isinstance(m, Checkpoint) else m, segs) for m in models]
    return float(np.mean(np.concatenate(probs)))


@dataclass
class EvalReport:
    f1_nd: float
    f1_d: float
    f1_avg: float
    confusion: list[list[int]]
    per_utterance_probs: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"f1_avg": self.f1_avg, "f1_nd": self.f1_nd, "f1_d": self.f1_d,
                           "confusion": self.confusion, "per_utterance": self.per_utterance_probs},
                          sort_keys=True)


def _f1(tp: int, fp: int, fn: int) -> float:
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def f1_scores(predictions: Mapping[str, int], truth: Mapping[str, int],
              probs: Mapping[str, float] | None = None) -> EvalReport:
    """Per-class F1 (0/0 counts as 0) and their unweighted mean; confusion is [[tn, fp], [fn, tp]]."""
    if set(predictions) != set(truth):
        raise ValueError("prediction and truth keys differ")
    tp = sum(1 for k in truth if truth[k] == 1 and predictions[k] == 1)
    tn = sum(1 for k in truth if truth[k] == 0 and predictions[k] == 0)
    fp = sum(1 for k in truth if truth[k] == 0 and predictions[k] == 1)
    fn = sum(1 for k in truth if truth[k] == 1 and predictions[k] == 0)
    f1_d = _f1(tp, fp, fn)
    f1_nd = _f1(tn, fn, fp)
    return EvalReport(f1_nd, f1_d, (f1_nd + f1_d) / 2, [[tn, fp], [fn, tp]], dict(probs or {}))


def evaluate(models: Sequence[Checkpoint], utterances: Sequence[Utterance]) -> EvalReport:
    probs = {u.utterance_id: predict_utterance(models, u) for u in utterances}
    preds = {k: int(p >= THRESHOLD) for k, p in probs.items()}
    truth = {u.utterance_id: int(u.label) for u in utterances}
    return f1_scores(preds, truth, probs)


def write_loss_curve(path, curve: Sequence[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in curve:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"]), repr(row["lr"])])
