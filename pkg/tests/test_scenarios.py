import numpy as np

from idlspeech.augment import augment_segment
from idlspeech.corpus import Segment
from idlspeech.nn import init_params
from idlspeech.scenarios import ToyPretraining, augment_gap, synth_segments, synth_sessions
from idlspeech.train import embed_segments


class TestSynthetic:
    def test_sessions_one_per_speaker_balanced(self):
        sessions = synth_sessions(6, 2, seed=0)
        assert len({u.speaker_id for u in sessions}) == 6
        assert sum(u.label for u in sessions) == 3
        assert all(u.utterance_id == u.speaker_id for u in sessions)

    def test_segments_seeded(self):
        a = synth_segments(2, 2, seed=4)
        b = synth_segments(2, 2, seed=4)
        assert len(a) == len(b) > 0
        np.testing.assert_array_equal(a[0].features, b[0].features)


class TestAugmentGap:
    def test_matches_direct_computation(self):
        pool = synth_segments(3, 2, seed=1)
        params = init_params(0)
        pos, cross = augment_gap(params, pool, "tm", seed=5)
        f = embed_segments(params, pool)
        aug = [Segment(augment_segment(s, "tm", 5 + i), s.utterance_id, s.speaker_id) for i, s in enumerate(pool)]
        f_hat = embed_segments(params, aug)
        m = len(pool)
        want_pos = np.mean([f[i] @ f_hat[i] for i in range(m)])
        want_cross = np.mean([f[i] @ f[j] for i in range(m) for j in range(m) if i != j])
        np.testing.assert_allclose([pos, cross], [want_pos, want_cross], rtol=1e-6)


class TestToyPretraining:
    def test_pis_continues_from_stage1(self):
        toy = ToyPretraining(n_speakers=3, utts_per_speaker=3, epochs=1, batch_size=3)
        pools = toy.pools()
        stage1 = toy.run("DS", 0, pools)
        stage2 = toy.run_pis(stage1, 0, pools)
        assert stage2.meta["config"]["strategy"] == "PIS"
        # the caller's pool is left without pseudo-labels
        assert all(s.pseudo_label is None for s in pools[0])
