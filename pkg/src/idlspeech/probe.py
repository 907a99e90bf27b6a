"""Linear speaker probe: how much speaker identity an embedding still carries."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class ProbeDataset:
    embeddings: np.ndarray
    speaker_ids: list[str]

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != len(self.speaker_ids):
            raise ValueError("one speaker id per embedding row required")

    def __len__(self) -> int:
        return len(self.speaker_ids)


@dataclass
class LinearSVM:
    weights: np.ndarray  # n_speakers x (dim + 1), bias last
    speakers: list[str]
    objective_trace: list[float]


def stratified_split(data: ProbeDataset, test_fraction: float = 0.3, seed: int = 0
                     ) -> tuple[ProbeDataset, ProbeDataset]:
    """Per speaker, round(test_fraction * count) segments go to test (at least one stays in train)."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    ids = np.array(data.speaker_ids)
    for spk in sorted(set(data.speaker_ids)):
        idx = rng.permutation(np.flatnonzero(ids == spk))
        n_test = min(int(round(test_fraction * idx.size)), idx.size - 1)
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    train_idx, test_idx = np.sort(train_idx).astype(int), np.sort(test_idx).astype(int)

    def take(ix):
        return ProbeDataset(data.embeddings[ix], [data.speaker_ids[i] for i in ix])

    return take(train_idx), take(test_idx)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _objective(w: np.ndarray, xb: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    margins = y * (xb @ w.T)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return 0.5 * lam * (w[:, :-1] ** 2).sum(axis=1) + hinge


def train_linear_svm(train: ProbeDataset, reg_lambda: float = 1e-4, epochs: int = 50, seed: int = 0,
                     lr: float = 100.0, inner_steps: int = 100) -> LinearSVM:
    """One-vs-rest linear SVMs on the L2-regularised hinge loss (bias unregularised).

    Each epoch runs ``inner_steps`` full-batch subgradient steps of size
    lr/sqrt(t) from the current weights and proposes the average of those
    iterates.  A class keeps the proposal only if it lowers its objective,
    otherwise its step size is halved, so the recorded trace never increases.
    Probe embeddings are unit vectors that differ by small amounts, which is
    why the default step is large.  ``seed`` fixes the order of the rows and
    so the floating point summation order.
    """
    speakers = sorted(set(train.speaker_ids))
    if len(speakers) < 2:
        raise ValueError("probe needs at least two speakers")
    order = np.random.default_rng(seed).permutation(len(train))
    xb = _augment(train.embeddings)[order]
    lookup = {s: k for k, s in enumerate(speakers)}
    cls = np.array([lookup[train.speaker_ids[i]] for i in order])
    m = xb.shape[0]
    y = -np.ones((m, len(speakers)))
    y[np.arange(m), cls] = 1.0
    w = np.zeros((len(speakers), xb.shape[1]))
    step = np.full(len(speakers), lr)
    decay = 1.0 / np.sqrt(np.arange(1, inner_steps + 1))
    obj = _objective(w, xb, y, reg_lambda)
    trace = [float(obj.sum())]
    for _ in range(epochs):
        cur = w.copy()
        acc = np.zeros_like(w)
        for t in range(inner_steps):
            active = (y * (xb @ cur.T)) < 1.0
            grad = -((active * y).T @ xb) / m
            grad[:, :-1] += reg_lambda * cur[:, :-1]
            cur -= (step * decay[t])[:, None] * grad
            acc += cur
        proposal = acc / inner_steps
        new_obj = _objective(proposal, xb, y, reg_lambda)
        better = new_obj < obj
        w[better] = proposal[better]
        obj = np.where(better, new_obj, obj)
        step = np.where(better, step, step * 0.5)
        trace.append(float(obj.sum()))
    return LinearSVM(w, speakers, trace)


def predict(model: LinearSVM, embeddings: np.ndarray) -> list[str]:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[1] + 1 != model.weights.shape[1]:
        raise ValueError(f"embedding dim {x.shape[1]} does not match weights {model.weights.shape[1] - 1}")
    scores = _augment(x) @ model.weights.T
    return [model.speakers[k] for k in scores.argmax(axis=1)]


def probe_accuracy(model: LinearSVM, test: ProbeDataset) -> float:
    """Fraction of test rows whose top-scoring speaker (lowest index on ties) is correct."""
    if len(test) == 0:
        raise ValueError("empty probe test set")
    pred = predict(model, test.embeddings)
    return float(np.mean([p == t for p, t in zip(pred, test.speaker_ids)]))


def probe_report(accuracy: float, n_speakers: int, n_test: int, embedding_source: str) -> str:
    return json.dumps({"accuracy": accuracy, "n_speakers": n_speakers, "n_test": n_test,
                       "embedding_source": embedding_source}, sort_keys=True)


def run_probe(embeddings: np.ndarray, speaker_ids, seed: int = 0, test_fraction: float = 0.3,
              **svm_kwargs) -> tuple[float, LinearSVM, ProbeDataset]:
    train, test = stratified_split(ProbeDataset(embeddings, list(speaker_ids)), test_fraction, seed)
    model = train_linear_svm(train, seed=seed, **svm_kwargs)
    return probe_accuracy(model, test), model, test
