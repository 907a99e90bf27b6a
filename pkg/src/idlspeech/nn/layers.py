"""Differentiable layers used by DepAudioNet.

Activations are laid out channels-first, ``(batch, channels, time)``, for the
convolutional part and ``(batch, time, features)`` for the recurrent part.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, getitem, matmul, mean, mul, sigmoid, sqrt, stack, tanh


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """1-D cross-correlation, stride 1.

    x: (N, C_in, T), weight: (C_out, C_in, K), bias: (C_out,)
    returns (N, C_out, T + 2*padding - K + 1)
    """
    n, c_in, t = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d: input has {c_in} channels, weight expects {c_in_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    t_out = t + 2 * padding - k + 1
    # cols[n, t, c*K + j] = xp[n, c, t + j]
    cols = np.stack([xp[:, :, j : j + t_out] for j in range(k)], axis=-1)  # N, C, T, K
    cols = cols.transpose(0, 2, 1, 3).reshape(n, t_out, c_in * k)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T + bias.data).transpose(0, 2, 1)

    def backward(g, buf):
        gt = g.transpose(0, 2, 1)  # N, T, C_out
        if weight.requires_grad:
            gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1]))
            buf.add(weight, gw.reshape(weight.shape))
        if bias.requires_grad:
            buf.add(bias, gt.sum(axis=(0, 1)))
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(n, t_out, c_in, k)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j : j + t_out] += gcols[:, :, :, j].transpose(0, 2, 1)
            buf.add(x, gxp[:, :, padding : padding + t] if padding else gxp)

    return Tensor._make(np.ascontiguousarray(out), (x, weight, bias), backward, "conv1d")


def maxpool1d(x: Tensor, kernel: int = 3) -> Tensor:
    """Non-overlapping max pooling along time (stride = kernel).

    Trailing frames that do not fill a window are dropped.  Gradient is
    routed to the first maximal element of each window.
    """
    n, c, t = x.shape
    t_out = t // kernel
    win = x.data[:, :, : t_out * kernel].reshape(n, c, t_out, kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g, buf):
        gwin = np.zeros((n, c, t_out, kernel), dtype=g.dtype)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : t_out * kernel] = gwin.reshape(n, c, t_out * kernel)
        buf.add(x, gx)

    return Tensor._make(out, (x,), backward, "maxpool1d")


class BatchNormState:
    """Running statistics for one batch-norm layer (not trained by SGD)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm1d(x: Tensor, gain: Tensor, bias: Tensor, state: BatchNormState, train: bool,
                update_stats: bool = True) -> Tensor:
    """Per-channel normalisation of (N, C, T) over the N and T axes."""
    shape = (1, -1, 1)
    if train:
        mu = mean(x, axis=(0, 2), keepdims=True)
        centered = x - mu
        var = mean(centered * centered, axis=(0, 2), keepdims=True)
        xhat = centered / sqrt(var + state.eps)
        if update_stats:
            count = x.shape[0] * x.shape[2]
            m = state.momentum
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            state.running_mean = ((1 - m) * state.running_mean + m * mu.data.reshape(-1)).astype(
                state.running_mean.dtype)
            state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(
                state.running_var.dtype)
    else:
        rm = state.running_mean.reshape(shape).astype(x.dtype)
        rs = np.sqrt(state.running_var.reshape(shape).astype(x.dtype) + state.eps)
        xhat = (x - rm) / rs
    return xhat * gain.reshape(shape) + bias.reshape(shape)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, keep)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: (N, D_in), weight: (D_in, D_out), bias: (D_out,)."""
    return matmul(x, weight) + bias


def lstm_layer(x: Tensor, w_in: Tensor, w_rec: Tensor, b: Tensor,
               return_sequence: bool = True) -> Tensor:
    """Single-direction LSTM over (N, T, D).

    Gate order in the 4H axis is input, forget, cell, output.  Initial hidden
    and cell states are zero.  Returns (N, T, H), or the final hidden state
    (N, H) when ``return_sequence`` is false.
    """
    n, t, _ = x.shape
    hid = w_rec.shape[0]
    proj = add(matmul(x, w_in), b)  # N, T, 4H
    h = Tensor(np.zeros((n, hid), dtype=x.dtype))
    c = Tensor(np.zeros((n, hid), dtype=x.dtype))
    outputs = []
    for step in range(t):
        z = getitem(proj, (slice(None), step)) + matmul(h, w_rec)
        i = sigmoid(z[:, :hid])
        f = sigmoid(z[:, hid : 2 * hid])
        g = tanh(z[:, 2 * hid : 3 * hid])
        o = sigmoid(z[:, 3 * hid :])
        c = f * c + i * g
        h = o * tanh(c)
        if return_sequence:
            outputs.append(h)
    if return_sequence:
        return stack(outputs, axis=1)
    return h
