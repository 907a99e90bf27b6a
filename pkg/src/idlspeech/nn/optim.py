"""Plain SGD and the step-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .depaudionet import DepAudioNetParams


def lr_at_epoch(lr0: float, epoch: int, decay: float = 0.9, every: int = 2) -> float:
    """lr0 * decay ** floor(epoch / every), epochs counted from 0."""
    if lr0 <= 0:
        raise ValueError("lr0 must be positive")
    return lr0 * decay ** (epoch // every)


def sgd_step(params: DepAudioNetParams, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
    """In-place ``p <- p - lr * g`` on every trainable tensor.

    Gradients come from ``grads`` when given, else from each tensor's
    ``.grad``; tensors without a gradient are left alone.  Batch-norm running
    statistics are buffers and are never touched here.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for name, t in params.tensors.items():
        g = t.grad if grads is None else grads.get(name)
        if g is None:
            continue
        if g.shape != t.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {t.shape}")
        t.data = (t.data - lr * g).astype(t.dtype, copy=False)
