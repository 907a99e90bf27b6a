import math

import numpy as np
import pytest

from idlspeech.loss import (
    aug_probabilities,
    idl_loss,
    inst_probabilities,
    prob_aug,
    prob_inst,
    similarity,
)
from idlspeech.nn.autodiff import Tensor
from idlspeech.nn.depaudionet import l2_normalize
from idlspeech.nn.gradcheck import check_gradients


def unit_rows(rng, n, d=16):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loop_loss(F, F_hat, tau):
    """Scalar transcription of the loss, one term at a time."""
    n = len(F)
    dot = lambda a, b: sum(float(p) * float(q) for p, q in zip(a, b))
    total = 0.0
    for i in range(n):
        num = math.exp(dot(F[i], F_hat[i]) / tau)
        den = sum(math.exp(dot(F[k], F_hat[i]) / tau) for k in range(n))
        total += math.log(num / den)
        for j in range(n):
            if j == i:
                continue
            num = math.exp(dot(F[i], F[j]) / tau)
            den = sum(math.exp(dot(F[k], F[j]) / tau) for k in range(n))
            total += math.log(1.0 - num / den)
    return -total / n


class TestSimilarity:
    def test_values(self):
        a = np.array([1.0, 0.0, 0.0])
        assert similarity(a, a) == 1.0
        assert similarity(a, [0.0, 1.0, 0.0]) == 0.0
        assert similarity(a, [0.6, 0.8, 0.0]) == pytest.approx(0.6)

    def test_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            similarity(np.ones(3), np.ones(4))


class TestProbabilities:
    def test_uniform(self):
        F = np.tile(unit_rows(np.random.default_rng(0), 1), (5, 1))
        assert prob_aug(F, F, 2) == pytest.approx(0.2)
        assert prob_inst(F, 0, 3) == pytest.approx(0.2)

    def test_two_instance_softmax(self):
        F = np.array([[1.0, 0.0], [-1.0, 0.0]])
        F_hat = np.array([[1.0, 0.0], [0.0, 1.0]])
        expected = math.exp(0.1) / (math.exp(0.1) + math.exp(-0.1))
        assert expected == pytest.approx(0.5498, abs=1e-4)
        assert prob_aug(F, F_hat, 0, tau=10) == pytest.approx(expected, rel=1e-12)

    def test_orthogonal_self_term(self):
        F = np.eye(3)
        expected = 1.0 / (2.0 + math.exp(0.1))
        assert expected == pytest.approx(0.32204, abs=1e-5)
        assert prob_inst(F, 0, 1, tau=10) == pytest.approx(expected, rel=1e-12)

    def test_same_index(self):
        with pytest.raises(ValueError):
            prob_inst(np.eye(3), 1, 1)

    @pytest.mark.parametrize("n", [2, 3, 7, 16])
    def test_columns_normalised(self, n):
        rng = np.random.default_rng(n)
        F, F_hat = unit_rows(rng, n), unit_rows(rng, n)
        np.testing.assert_allclose(aug_probabilities(F, F_hat, 1.0).sum(axis=0), 1.0, atol=1e-12)
        q = inst_probabilities(F, 0.5)
        np.testing.assert_allclose(q.sum(axis=0), 1.0, atol=1e-12)
        assert np.all((q > 0) & (q < 1))


class TestLoss:
    @pytest.mark.parametrize("n", [2, 3, 4, 8])
    @pytest.mark.parametrize("tau", [1.0, 10.0])
    def test_matches_loop(self, n, tau):
        rng = np.random.default_rng(100 * n + int(tau))
        for _ in range(3):
            F, F_hat = unit_rows(rng, n), unit_rows(rng, n)
            assert idl_loss(F, F_hat, tau).item() == pytest.approx(loop_loss(F, F_hat, tau), abs=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_uniform_closed_form(self, n):
        F = np.tile(unit_rows(np.random.default_rng(1), 1), (n, 1))
        expected = -math.log(1 / n) - (n - 1) * math.log(1 - 1 / n)
        assert idl_loss(F, F, 10.0).item() == pytest.approx(expected, rel=1e-12)
        if n == 2:
            assert expected == pytest.approx(1.3863, abs=1e-4)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        F, F_hat = unit_rows(rng, 6), unit_rows(rng, 6)
        perm = rng.permutation(6)
        a = idl_loss(F, F_hat).item()
        b = idl_loss(F[perm], F_hat[perm]).item()
        assert a == pytest.approx(b, abs=1e-10)

    def test_rejects_small_batch(self):
        with pytest.raises(ValueError):
            idl_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            idl_loss(np.eye(3), np.eye(4)[:3])

    def test_clamp_warns(self, caplog):
        # unit rows keep P(x_i|x_j) <= 1/2 (the self term dominates), so the
        # guard is reached only by an unnormalised row that swamps the softmax
        F = np.array([[50.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        with caplog.at_level("WARNING"):
            value = idl_loss(F, F, tau=1e-2).item()
        assert np.isfinite(value)
        assert "clamping" in caplog.text

    def test_gradient(self):
        rng = np.random.default_rng(3)
        raw = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        raw_hat = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        f = lambda: idl_loss(l2_normalize(raw), l2_normalize(raw_hat), 1.0)
        errs = check_gradients(f, {"F": raw, "F_hat": raw_hat})
        assert max(errs.values()) < 1e-5


class TestFreeEmbeddingDescent:
    def test_loss_and_similarities_move(self):
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(6, 8))
        raw_hat = raw + 0.8 * rng.normal(size=(6, 8))
        losses, pos, neg = [], [], []
        off = ~np.eye(6, dtype=bool)
        for _ in range(50):
            a = Tensor(raw, requires_grad=True)
            b = Tensor(raw_hat, requires_grad=True)
            F, F_hat = l2_normalize(a), l2_normalize(b)
            loss = idl_loss(F, F_hat, tau=1.0)
            losses.append(loss.item())
            pos.append(np.mean(np.sum(F.data * F_hat.data, axis=1)))
            neg.append(np.mean((F.data @ F.data.T)[off]))
            loss.backward()
            raw = raw - 1e-2 * a.grad
            raw_hat = raw_hat - 1e-2 * b.grad
        assert all(x > y for x, y in zip(losses, losses[1:]))
        assert pos[-1] > pos[0] and neg[-1] < neg[0]
