"""Instance-discrimination objective over a batch of embeddings.

For originals ``F`` (n x d) and augmented copies ``F_hat`` (n x d), with
temperature ``tau``:

    P(x_i | x^_i) = exp(<f_i, f^_i>/tau) / sum_k exp(<f_k, f^_i>/tau)
    P(x_i | x_j)  = exp(<f_i, f_j>/tau)  / sum_k exp(<f_k, f_j>/tau),  j != i
    L = -(1/n) [ sum_i log P(x_i|x^_i) + sum_i sum_{j!=i} log(1 - P(x_i|x_j)) ]

Both denominators run over the original embeddings only.
"""

from __future__ import annotations

import logging

import numpy as np

from .nn.autodiff import Tensor, exp, log, logsumexp, matmul, maximum, tsum

log_ = logging.getLogger(__name__)

DEFAULT_TAU = 10.0
ONE_MINUS_P_FLOOR = 1e-12


def _as_matrix(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


def _check_batch(F: np.ndarray, F_hat: np.ndarray | None, tau: float) -> None:
    if F.ndim != 2 or F.shape[0] < 2:
        raise ValueError("batch needs at least two embeddings")
    if F_hat is not None and F_hat.shape != F.shape:
        raise ValueError(f"F and F_hat shapes differ: {F.shape} vs {F_hat.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")


def aug_probabilities(F, F_hat, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Matrix Q with Q[i, j] = P(x_i | x^_j); every column sums to one."""
    F, F_hat = _as_matrix(F), _as_matrix(F_hat)
    _check_batch(F, F_hat, tau)
    s = F @ F_hat.T / tau
    s = s - s.max(axis=0, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=0, keepdims=True)


def inst_probabilities(F, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Matrix Q with Q[i, j] = P(x_i | x_j), diagonal included for normalisation."""
    F = _as_matrix(F)
    _check_batch(F, None, tau)
    s = F @ F.T / tau
    s = s - s.max(axis=0, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=0, keepdims=True)


def prob_aug(F, F_hat, i: int, tau: float = DEFAULT_TAU) -> float:
    return float(aug_probabilities(F, F_hat, tau)[i, i])


def prob_inst(F, i: int, j: int, tau: float = DEFAULT_TAU) -> float:
    if i == j:
        raise ValueError("prob_inst needs i != j")
    return float(inst_probabilities(F, tau)[i, j])


def idl_loss(F: Tensor, F_hat: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """Differentiable batch loss; F and F_hat are (n, d) tensors of unit rows."""
    if not isinstance(F, Tensor):
        F = Tensor(np.asarray(F, dtype=np.float64))
    if not isinstance(F_hat, Tensor):
        F_hat = Tensor(np.asarray(F_hat, dtype=F.dtype))
    _check_batch(F.data, F_hat.data, tau)
    n = F.shape[0]
    inv_tau = 1.0 / tau
    eye = np.eye(n, dtype=F.dtype)

    # columns index the conditioning instance: S[k, i] = <f_k, f^_i>/tau
    s_aug = matmul(F, F_hat.T) * inv_tau
    log_p_aug = s_aug - logsumexp(s_aug, axis=0, keepdims=True)
    pos_term = tsum(log_p_aug * eye)

    s_inst = matmul(F, F.T) * inv_tau
    p_inst = exp(s_inst - logsumexp(s_inst, axis=0, keepdims=True))
    one_minus = 1.0 - p_inst
    if np.any(one_minus.data[eye == 0] < ONE_MINUS_P_FLOOR):
        log_.warning("P(x_i|x_j) reached 1; clamping 1-P at %g", ONE_MINUS_P_FLOOR)
    neg_term = tsum(log(maximum(one_minus, ONE_MINUS_P_FLOOR)) * (1.0 - eye))

    return (pos_term + neg_term) * (-1.0 / n)
