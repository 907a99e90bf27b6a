"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-4,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``t``.

    When ``indices`` is given only those entries are perturbed and the result
    is a 1-D array in the same order.
    """
    flat_idx = list(np.ndindex(t.shape)) if indices is None else list(indices)
    out = np.empty(len(flat_idx))
    for k, idx in enumerate(flat_idx):
        orig = t.data[idx]
        t.data[idx] = orig + step
        up = fn().item()
        t.data[idx] = orig - step
        down = fn().item()
        t.data[idx] = orig
        out[k] = (up - down) / (2 * step)
    return out.reshape(t.shape) if indices is None else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a| + |n|, floor) over entries, the usual symmetric form."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(fn: Callable[[], Tensor], tensors: dict[str, Tensor], step: float = 1e-4,
                    max_entries: int | None = 40, seed: int = 0) -> dict[str, float]:
    """Compare analytic and numeric gradients; returns the max relative error per tensor.

    ``fn`` must rebuild the graph on every call and be deterministic.  For large
    tensors a seeded subset of ``max_entries`` entries is checked.
    """
    for t in tensors.values():
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors")
        t.grad = None
    loss = fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        all_idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            idx = [all_idx[k] for k in pick]
        else:
            idx = all_idx
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        a = np.array([analytic[i] for i in idx])
        n = numeric_grad(fn, t, step, idx)
        errors[name] = relative_error(a, n)
    return errors
