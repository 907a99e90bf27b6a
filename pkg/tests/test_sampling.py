from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlspeech.corpus import Segment
from idlspeech.sampling import (
    KMeansModel,
    _repair_empty,
    SamplingError,
    apply_pseudo_labels,
    assign_pseudo_labels,
    kmeans_fit,
    make_plan,
    nearest_centroid,
    read_pseudo_labels,
    sample_ds,
    sample_pis,
    sample_rs,
    write_pseudo_labels,
)

ZERO = np.zeros((40, 120), dtype=np.float32)


def pool_of(speakers, pseudo=None):
    """One segment per entry; speakers[i] names the speaker of segment i."""
    segs = []
    for i, spk in enumerate(speakers):
        lab = None if pseudo is None else pseudo[i]
        segs.append(Segment(ZERO, spk, spk, pseudo_label=lab, segment_index=i))
    return segs


class TestRandom:
    def test_partition(self):
        plan = sample_rs(pool_of([f"s{i % 4}" for i in range(40)]), 20, seed=0)
        assert len(plan) == 2
        assert sorted(i for b in plan for i in b) == list(range(40))

    def test_tail_dropped(self):
        plan = sample_rs(pool_of(["a"] * 45), 20, seed=0)
        assert len(plan) == 2 and all(len(b) == 20 for b in plan)

    def test_seeded(self):
        pool = pool_of(["a"] * 30)
        assert sample_rs(pool, 10, 4).batches == sample_rs(pool, 10, 4).batches

    def test_same_speaker_possible(self):
        pool = pool_of(["a", "b"] * 10)
        plan = sample_rs(pool, 4, 0)
        assert any(len({pool[i].speaker_id for i in b}) < 4 for b in plan)

    def test_too_small(self):
        with pytest.raises(SamplingError):
            sample_rs(pool_of(["a"] * 3), 4, 0)


class TestDistinctSpeaker:
    def test_exact_speakers(self):
        pool = pool_of([f"s{i % 20}" for i in range(100)])
        for b in sample_ds(pool, 20, 1):
            assert {pool[i].speaker_id for i in b} == {f"s{k}" for k in range(20)}

    def test_epoch_length(self):
        pool = pool_of([f"s{i % 25}" for i in range(103)])
        assert len(sample_ds(pool, 20, 1)) == 103 // 20

    def test_insufficient(self):
        with pytest.raises(SamplingError, match="insufficient speakers"):
            sample_ds(pool_of([f"s{i}" for i in range(19)] * 3), 20, 0)


class TestPseudoInstance:
    def test_distinct_labels(self):
        labels = [i % 5 for i in range(30)]
        pool = pool_of(["a"] * 30, labels)
        for b in sample_pis(pool, 5, 2):
            assert sorted(pool[i].pseudo_label for i in b) == list(range(5))

    def test_singleton_cluster_every_batch(self):
        labels = [0] + [1 + i % 3 for i in range(39)]
        pool = pool_of(["a"] * 40, labels)
        plan = sample_pis(pool, 4, 3)
        counts = Counter(i for b in plan for i in b)
        assert counts[0] == len(plan) == 10

    def test_empty_cluster(self):
        pool = pool_of(["a"] * 10, [0, 1, 3] * 3 + [0])
        with pytest.raises(SamplingError, match="degenerate clustering"):
            sample_pis(pool, 4, 0)

    def test_unlabelled(self):
        with pytest.raises(SamplingError):
            sample_pis(pool_of(["a"] * 10), 2, 0)

    def test_make_plan_dispatch(self):
        pool = pool_of([f"s{i}" for i in range(8)], [i % 2 for i in range(8)])
        for name in ("rs", "DS", "pis"):
            assert make_plan(name, pool, 2, 0).strategy == name.upper()
        with pytest.raises(ValueError):
            make_plan("xx", pool, 2, 0)


@st.composite
def labelled_pool(draw):
    n = draw(st.integers(2, 8))
    extra = draw(st.lists(st.integers(0, n - 1), min_size=0, max_size=30))
    labels = list(range(n)) + extra  # every group populated
    return n, labels


class TestPlanProperties:
    @settings(max_examples=60, deadline=None)
    @given(labelled_pool(), st.integers(0, 2**32 - 1))
    def test_ds_distinct(self, spec, seed):
        n, labels = spec
        pool = pool_of([f"s{k}" for k in labels])
        for b in sample_ds(pool, n, seed):
            assert len(b) == n == len(set(b))
            assert len({pool[i].speaker_id for i in b}) == n

    @settings(max_examples=60, deadline=None)
    @given(labelled_pool(), st.integers(0, 2**32 - 1))
    def test_pis_distinct(self, spec, seed):
        n, labels = spec
        pool = pool_of(["a"] * len(labels), labels)
        for b in sample_pis(pool, n, seed):
            assert len({pool[i].pseudo_label for i in b}) == n

    @settings(max_examples=60, deadline=None)
    @given(labelled_pool(), st.integers(0, 2**32 - 1))
    def test_rs_distinct_indices(self, spec, seed):
        n, labels = spec
        for b in sample_rs(pool_of(["a"] * len(labels)), n, seed):
            assert len(set(b)) == n


def blobs(seed, c=4, per=50, d=8, spread=0.05):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(c, d)) * 3.0
    x = np.concatenate([m + spread * rng.normal(size=(per, d)) for m in means])
    return x, means


class TestKMeans:
    @pytest.mark.parametrize("seed", range(5))
    def test_blob_recovery(self, seed):
        x, means = blobs(seed)
        model = kmeans_fit(x, 4, seed)
        for m in means:
            assert np.min(np.linalg.norm(model.centroids - m, axis=1)) < 0.1

    @pytest.mark.parametrize("seed", range(8))
    def test_inertia_non_increasing(self, seed):
        x = np.random.default_rng(seed).normal(size=(120, 5))
        hist = kmeans_fit(x, 7, seed).inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_restarts_escape_split_blob(self):
        # one k-means++ seeding of this draw puts two centres in one blob
        centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
        rng = np.random.default_rng(70)
        x = np.concatenate([c + 0.5 * rng.normal(size=(200, 2)) for c in centres])
        single = kmeans_fit(x, 4, 5, n_init=1)
        best = kmeans_fit(x, 4, 5)
        assert best.inertia < single.inertia / 10
        for c in centres:
            assert np.min(np.linalg.norm(best.centroids - c, axis=1)) < 0.1

    def test_c_equals_m(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        model = kmeans_fit(x, 6, 0)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)
        assert sorted(model.predict(x)) == list(range(6))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeans_fit(np.zeros((3, 2)), 4, 0)

    def test_deterministic_and_permutation(self):
        x, _ = blobs(9)
        a, b = kmeans_fit(x, 4, 1), kmeans_fit(x, 4, 1)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        perm = np.random.default_rng(0).permutation(len(x))
        assert kmeans_fit(x[perm], 4, 1).inertia == pytest.approx(a.inertia, abs=1e-9)

    def test_empty_cluster_repair(self):
        x = np.array([[0.0], [1.0], [2.0], [10.0]])
        centroids = np.array([[1.0], [50.0], [60.0]])
        labels, d2 = nearest_centroid(x, centroids)
        assert set(labels) == {0}
        labels, d2 = _repair_empty(x, centroids, labels, d2)
        assert np.bincount(labels, minlength=3).min() == 1
        # the farthest point (10) is moved first and becomes its own centroid
        assert labels[3] == 1 and centroids[1, 0] == 10.0
        assert d2.sum() < nearest_centroid(x, np.array([[1.0], [50.0], [60.0]]))[1].sum()


class TestPseudoLabels:
    def test_tie_lowest_index(self):
        centroids = np.array([[5.0, 5.0], [1.0, 0.0], [9.0, 9.0], [7.0, 7.0], [-1.0, 0.0]])
        labels, _ = nearest_centroid(np.zeros((1, 2)), centroids)
        assert labels[0] == 1

    def test_exact_centroid(self):
        centroids = np.eye(5)
        model = KMeansModel(centroids, 0.0)
        assert model.predict(centroids[3:4])[0] == 3

    def test_assign_and_round_trip(self, tmp_path):
        pool = pool_of([f"s{i}" for i in range(12)])
        emb = np.random.default_rng(0).normal(size=(12, 4))
        model = kmeans_fit(emb, 3, 0)
        assign_pseudo_labels(pool, model, embeddings=emb)
        assert {s.pseudo_label for s in pool} <= {0, 1, 2}
        write_pseudo_labels(tmp_path / "p.jsonl", pool)
        fresh = pool_of([f"s{i}" for i in range(12)])
        apply_pseudo_labels(fresh, read_pseudo_labels(tmp_path / "p.jsonl"))
        assert [s.pseudo_label for s in fresh] == [s.pseudo_label for s in pool]

    def test_missing_stage_one(self):
        with pytest.raises(ValueError, match="stage-1"):
            assign_pseudo_labels(pool_of(["a"]), KMeansModel(np.eye(2), 0.0))

    def test_missing_label(self):
        with pytest.raises(KeyError):
            apply_pseudo_labels(pool_of(["a"]), {})
