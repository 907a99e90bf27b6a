import json

import numpy as np
import pytest

from idlspeech.probe import (
    LinearSVM,
    ProbeDataset,
    predict,
    probe_accuracy,
    probe_report,
    run_probe,
    stratified_split,
    train_linear_svm,
)


def clustered(seed, n_spk=4, per=20, d=6, spread=0.3):
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_spk, d)) * 2
    x = np.concatenate([c + spread * rng.normal(size=(per, d)) for c in centres])
    ids = [f"s{k}" for k in range(n_spk) for _ in range(per)]
    return ProbeDataset(x, ids)


class TestSplit:
    def test_thirty_percent_per_speaker(self):
        data = clustered(0, per=10)
        train, test = stratified_split(data, 0.3, seed=1)
        assert len(test) == 12 and len(train) == 28
        for k in range(4):
            assert test.speaker_ids.count(f"s{k}") == 3

    def test_disjoint_and_seeded(self):
        data = clustered(1)
        a_tr, a_te = stratified_split(data, 0.3, 5)
        b_tr, b_te = stratified_split(data, 0.3, 5)
        np.testing.assert_array_equal(a_te.embeddings, b_te.embeddings)
        rows = {tuple(r) for r in a_tr.embeddings}
        assert not any(tuple(r) in rows for r in a_te.embeddings)


class TestSvm:
    def test_separable(self):
        data = clustered(2)
        acc, model, _ = run_probe(data.embeddings, data.speaker_ids, seed=0)
        assert acc == 1.0
        assert model.weights.shape == (4, 7)

    def test_objective_non_increasing(self):
        data = clustered(3, spread=1.5)
        model = train_linear_svm(data, seed=0)
        trace = model.objective_trace
        assert len(trace) == 51
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert trace[-1] < trace[0]

    def test_deterministic(self):
        data = clustered(4, spread=1.0)
        a = train_linear_svm(data, seed=7).weights
        b = train_linear_svm(data, seed=7).weights
        np.testing.assert_array_equal(a, b)

    def test_chance_on_noise(self):
        rng = np.random.default_rng(5)
        ids = [f"s{k % 5}" for k in range(500)]
        acc, _, _ = run_probe(rng.normal(size=(500, 8)), ids, seed=0)
        assert acc < 0.4

    def test_fits_small_offsets_under_shared_variation(self):
        # speaker offsets are tiny next to a shared low-rank spread, as in network embeddings;
        # a short, small-step run stays below 0.75 here
        rng = np.random.default_rng(8)
        base = rng.normal(size=128)
        base /= np.linalg.norm(base)
        shared = 0.3 * rng.normal(size=(4, 128))
        centres = base + 0.02 * rng.normal(size=(10, 128))
        x = np.concatenate([c + rng.normal(size=(8, 4)) @ shared + 0.004 * rng.normal(size=(8, 128))
                            for c in centres])
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        data = ProbeDataset(x, [f"s{k}" for k in range(10) for _ in range(8)])
        assert probe_accuracy(train_linear_svm(data, seed=0), data) >= 0.95
        assert probe_accuracy(train_linear_svm(data, seed=0, lr=0.5, inner_steps=3), data) < 0.75

    def test_single_speaker(self):
        with pytest.raises(ValueError):
            train_linear_svm(ProbeDataset(np.zeros((3, 2)), ["a"] * 3))


class TestAccuracy:
    def test_tie_goes_to_lowest_index(self):
        model = LinearSVM(np.zeros((3, 3)), ["a", "b", "c"], [])
        assert predict(model, np.ones((2, 2))) == ["a", "a"]
        assert probe_accuracy(model, ProbeDataset(np.ones((4, 2)), ["a", "b", "a", "c"])) == 0.5

    def test_empty(self):
        model = LinearSVM(np.zeros((2, 3)), ["a", "b"], [])
        with pytest.raises(ValueError, match="empty"):
            probe_accuracy(model, ProbeDataset(np.zeros((0, 2)), []))

    def test_dim_mismatch(self):
        model = LinearSVM(np.zeros((2, 129)), ["a", "b"], [])
        with pytest.raises(ValueError):
            predict(model, np.zeros((1, 64)))

    def test_report(self):
        rep = json.loads(probe_report(0.75, 10, 40, "finetuned"))
        assert rep == {"accuracy": 0.75, "n_speakers": 10, "n_test": 40, "embedding_source": "finetuned"}
