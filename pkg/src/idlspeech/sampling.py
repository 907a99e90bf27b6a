"""Batch construction: random (RS), distinct-speaker (DS) and pseudo-instance (PIS)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Segment

log = logging.getLogger(__name__)

STRATEGIES = ("RS", "DS", "PIS")


class SamplingError(ValueError):
    pass


@dataclass
class BatchPlan:
    batches: list[list[int]]
    strategy: str
    batch_size: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


@dataclass
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return nearest_centroid(np.asarray(x, dtype=np.float64), self.centroids)[0]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_rs(pool: Sequence[Segment], n: int, seed: int) -> BatchPlan:
    """Seeded shuffle chunked into batches of ``n``; the partial tail batch is dropped."""
    if len(pool) < n:
        raise SamplingError(f"pool of {len(pool)} segments is smaller than batch size {n}")
    order = _rng(seed).permutation(len(pool))
    n_batches = len(pool) // n
    return BatchPlan([order[b * n : (b + 1) * n].tolist() for b in range(n_batches)], "RS", n)


def _group(pool: Sequence[Segment], key: Callable[[Segment], object]) -> dict:
    groups: dict = {}
    for i, seg in enumerate(pool):
        groups.setdefault(key(seg), []).append(i)
    return groups


def _one_per_group(groups: dict, n: int, n_batches: int, rng, strategy: str, choose_groups: bool) -> BatchPlan:
    keys = sorted(groups)
    batches = []
    for _ in range(n_batches):
        picked = rng.choice(len(keys), size=n, replace=False) if choose_groups else np.arange(len(keys))
        batch = []
        for g in picked:
            members = groups[keys[g]]
            batch.append(members[int(rng.integers(len(members)))])
        batches.append(batch)
    return BatchPlan(batches, strategy, n)


def sample_ds(pool: Sequence[Segment], n: int, seed: int) -> BatchPlan:
    """Each batch: ``n`` distinct speakers, one uniformly chosen segment from each."""
    groups = _group(pool, lambda s: s.speaker_id)
    if len(groups) < n:
        raise SamplingError(f"insufficient speakers: {len(groups)} distinct speakers < batch size {n}")
    return _one_per_group(groups, n, len(pool) // n, _rng(seed), "DS", choose_groups=True)


def sample_pis(pool: Sequence[Segment], n: int, seed: int) -> BatchPlan:
    """Each batch: one uniformly chosen segment from every one of the ``n`` clusters."""
    if any(s.pseudo_label is None for s in pool):
        raise SamplingError("every segment needs a pseudo_label before PIS sampling")
    groups = _group(pool, lambda s: s.pseudo_label)
    missing = sorted(set(range(n)) - set(groups))
    if missing or len(groups) != n:
        raise SamplingError(
            f"degenerate clustering (empty clusters {missing}); re-run kmeans_fit with a new seed")
    return _one_per_group(groups, n, len(pool) // n, _rng(seed), "PIS", choose_groups=False)


def make_plan(strategy: str, pool: Sequence[Segment], n: int, seed: int) -> BatchPlan:
    strategy = strategy.upper()
    if strategy == "RS":
        return sample_rs(pool, n, seed)
    if strategy == "DS":
        return sample_ds(pool, n, seed)
    if strategy == "PIS":
        return sample_pis(pool, n, seed)
    raise ValueError(f"unknown strategy {strategy!r}")


# -- k-means ------------------------------------------------------------------------


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels, squared distances); argmin keeps the lowest index on ties."""
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids * centroids).sum(1)[None, :]
    d2 = np.maximum(d2, 0.0)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(x.shape[0]), labels]


def _kmeans_pp(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centers = [int(rng.integers(m))]
    d2 = ((x - x[centers[0]]) ** 2).sum(1)
    for _ in range(1, c):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centre; pick any unused index
            unused = np.setdiff1d(np.arange(m), centers)
            nxt = int(rng.choice(unused))
        else:
            nxt = int(rng.choice(m, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(1))
    return x[centers].copy()


def kmeans_fit(embeddings: np.ndarray, n_clusters: int, seed: int, max_iter: int = 100,
               tol: float = 1e-6, n_init: int = 4) -> KMeansModel:
    """k-means++ seeding followed by Lloyd iterations, best of ``n_init`` seedings.

    Each run stops when no centroid moves more than ``tol`` or after
    ``max_iter`` iterations.  A cluster that empties is re-seeded with the
    point farthest from its current centroid (taken from a cluster with at
    least two members).  Runs use child seeds of ``seed``; the lowest final
    inertia wins (earliest run on ties) and its ``inertia_history`` records
    the inertia after each assignment.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[0] < n_clusters:
        raise ValueError(f"need at least {n_clusters} points, got {x.shape[0]}")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        run = _lloyd(x, n_clusters, _rng(child), max_iter, tol)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def _lloyd(x: np.ndarray, n_clusters: int, rng: np.random.Generator, max_iter: int, tol: float) -> KMeansModel:
    centroids = _kmeans_pp(x, n_clusters, rng)
    history: list[float] = []
    labels, d2 = nearest_centroid(x, centroids)
    it = 0
    for it in range(1, max_iter + 1):
        labels, d2 = _repair_empty(x, centroids, labels, d2)
        history.append(float(d2.sum()))
        new = np.array([x[labels == k].mean(axis=0) for k in range(n_clusters)])
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        labels, d2 = nearest_centroid(x, centroids)
        if shift < tol:
            break
    labels, d2 = _repair_empty(x, centroids, labels, d2)
    inertia = float(d2.sum())
    history.append(inertia)
    return KMeansModel(centroids, inertia, history, it)


def _repair_empty(x, centroids, labels, d2):
    counts = np.bincount(labels, minlength=centroids.shape[0])
    for k in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        cand = np.where(movable, d2, -1.0)
        far = int(np.argmax(cand))
        counts[labels[far]] -= 1
        counts[k] += 1
        labels[far] = k
        centroids[k] = x[far]
        d2[far] = 0.0
    return labels, d2


def assign_pseudo_labels(pool: Sequence[Segment], model: KMeansModel,
                         embed_fn: Callable[[Sequence[Segment]], np.ndarray] | None = None,
                         embeddings: np.ndarray | None = None) -> list[Segment]:
    """Set ``pseudo_label`` to the nearest centroid (lowest index on ties) on every segment."""
    if embeddings is None:
        if embed_fn is None:
            raise ValueError("need embed_fn or precomputed embeddings (stage-1 model missing)")
        embeddings = embed_fn(pool)
    labels = model.predict(embeddings)
    for seg, lab in zip(pool, labels):
        seg.pseudo_label = int(lab)
    return list(pool)


def write_pseudo_labels(path, pool: Sequence[Segment]) -> None:
    with open(path, "w") as fh:
        for seg in pool:
            fh.write(json.dumps({"utterance_id": seg.utterance_id, "segment_index": seg.segment_index,
                                 "pseudo_label": seg.pseudo_label}) + "\n")


def read_pseudo_labels(path) -> dict[tuple[str, int], int]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out[(rec["utterance_id"], int(rec["segment_index"]))] = int(rec["pseudo_label"])
    return out


def apply_pseudo_labels(pool: Sequence[Segment], labels: dict[tuple[str, int], int]) -> None:
    for seg in pool:
        if seg.key not in labels:
            raise KeyError(f"no pseudo label for segment {seg.key}")
        seg.pseudo_label = labels[seg.key]
