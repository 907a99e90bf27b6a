"""DepAudioNet: conv1d -> batchnorm -> ReLU -> maxpool -> dropout -> 2x LSTM -> FC."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, relu, sigmoid, sqrt, tsum
from .layers import BatchNormState, batchnorm1d, conv1d, dropout, linear, lstm_layer, maxpool1d

N_MELS = 40
SEGMENT_FRAMES = 120
HIDDEN = 128
KERNEL = 3
POOL = 3
DROPOUT_P = 0.05

# name -> shape, in a fixed order (checkpoint tensor tables follow it)
PARAM_SHAPES = OrderedDict(
    [
        ("conv.weight", (HIDDEN, N_MELS, KERNEL)),
        ("conv.bias", (HIDDEN,)),
        ("bn.gain", (HIDDEN,)),
        ("bn.bias", (HIDDEN,)),
        ("lstm1.w_in", (HIDDEN, 4 * HIDDEN)),
        ("lstm1.w_rec", (HIDDEN, 4 * HIDDEN)),
        ("lstm1.bias", (4 * HIDDEN,)),
        ("lstm2.w_in", (HIDDEN, 4 * HIDDEN)),
        ("lstm2.w_rec", (HIDDEN, 4 * HIDDEN)),
        ("lstm2.bias", (4 * HIDDEN,)),
        ("fc.weight", (HIDDEN, 1)),
        ("fc.bias", (1,)),
    ]
)
BUFFER_NAMES = ("bn.running_mean", "bn.running_var")


class DepAudioNetParams:
    """Trainable tensors plus the batch-norm running statistics.

    ``tensors`` maps parameter names (see ``PARAM_SHAPES``) to leaf tensors
    with ``requires_grad=True``; ``bn_state`` holds the running statistics,
    which are updated by training-mode forward passes and never by the
    optimizer.
    """

    def __init__(self, tensors: dict[str, Tensor], bn_state: BatchNormState):
        missing = set(PARAM_SHAPES) - set(tensors)
        if missing:
            raise ValueError(f"uninitialized parameters: {sorted(missing)}")
        for name, shape in PARAM_SHAPES.items():
            if tensors[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.tensors = OrderedDict((k, tensors[k]) for k in PARAM_SHAPES)
        self.bn_state = bn_state

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for p in self.tensors.values():
            p.grad = None

    @property
    def dtype(self):
        return self.tensors["conv.weight"].dtype

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        """All parameters and buffers as plain arrays, in checkpoint order."""
        out = OrderedDict((k, t.data) for k, t in self.tensors.items())
        out["bn.running_mean"] = self.bn_state.running_mean
        out["bn.running_var"] = self.bn_state.running_var
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], dtype=None) -> DepAudioNetParams:
        def cast(a):
            a = np.asarray(a)
            return a.astype(dtype) if dtype is not None else a.copy()

        tensors = {k: Tensor(cast(arrays[k]), requires_grad=True) for k in PARAM_SHAPES if k in arrays}
        ref = tensors.get("conv.weight")
        state = BatchNormState(HIDDEN, dtype=ref.dtype if ref is not None else np.float32)
        if "bn.running_mean" in arrays:
            state.running_mean = cast(arrays["bn.running_mean"])
            state.running_var = cast(arrays["bn.running_var"])
        return cls(tensors, state)

    def copy(self, dtype=None) -> DepAudioNetParams:
        return DepAudioNetParams.from_arrays(self.arrays(), dtype=dtype)


def init_params(seed: int, dtype=np.float32) -> DepAudioNetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    arrays = {
        "conv.weight": uniform(PARAM_SHAPES["conv.weight"], N_MELS * KERNEL),
        "conv.bias": np.zeros(HIDDEN, dtype=dtype),
        "bn.gain": np.ones(HIDDEN, dtype=dtype),
        "bn.bias": np.zeros(HIDDEN, dtype=dtype),
    }
    for layer in ("lstm1", "lstm2"):
        arrays[f"{layer}.w_in"] = uniform((HIDDEN, 4 * HIDDEN), HIDDEN)
        arrays[f"{layer}.w_rec"] = uniform((HIDDEN, 4 * HIDDEN), HIDDEN)
        bias = np.zeros(4 * HIDDEN, dtype=dtype)
        bias[HIDDEN : 2 * HIDDEN] = 1.0
        arrays[f"{layer}.bias"] = bias
    arrays["fc.weight"] = uniform((HIDDEN, 1), HIDDEN)
    arrays["fc.bias"] = np.zeros(1, dtype=dtype)
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return DepAudioNetParams(tensors, BatchNormState(HIDDEN, dtype=dtype))


def l2_normalize(h: Tensor, eps: float = 1e-12) -> Tensor:
    return h / sqrt(tsum(h * h, axis=1, keepdims=True) + eps)


def backbone(x: Tensor, params: DepAudioNetParams, train: bool,
             rng: np.random.Generator | None, update_stats: bool = True) -> Tensor:
    """Shared trunk; x is (N, 40, 120), returns the final LSTM hidden state (N, 128)."""
    if x.ndim != 3 or x.shape[1] != N_MELS:
        raise ValueError(f"expected input of shape (N, {N_MELS}, T), got {x.shape}")
    p = params.tensors
    h = conv1d(x, p["conv.weight"], p["conv.bias"], padding=1)
    h = batchnorm1d(h, p["bn.gain"], p["bn.bias"], params.bn_state, train, update_stats)
    h = relu(h)
    h = maxpool1d(h, POOL)
    h = dropout(h, DROPOUT_P, train, rng)
    seq = h.transpose(0, 2, 1)  # N, T/3, 128
    seq = lstm_layer(seq, p["lstm1.w_in"], p["lstm1.w_rec"], p["lstm1.bias"])
    return lstm_layer(seq, p["lstm2.w_in"], p["lstm2.w_rec"], p["lstm2.bias"], return_sequence=False)


def logits(x: Tensor, params: DepAudioNetParams, train: bool, rng=None, update_stats=True) -> Tensor:
    h = backbone(x, params, train, rng, update_stats)
    return linear(h, params["fc.weight"], params["fc.bias"]).reshape(-1)


def embed(x: Tensor, params: DepAudioNetParams, train: bool, rng=None, update_stats=True) -> Tensor:
    return l2_normalize(backbone(x, params, train, rng, update_stats))


def forward_depaudionet(seg, params: DepAudioNetParams, mode: str = "embed",
                        train_flag: bool = False, seed: int = 0) -> Tensor:
    """Run DepAudioNet on one segment (40x120) or a batch (N x 40 x 120).

    ``mode="embed"`` returns the unit-norm final hidden state, ``"classify"``
    the sigmoid probability.  ``seed`` drives the dropout mask.
    """
    if params is None:
        raise ValueError("uninitialized params")
    x = seg if isinstance(seg, Tensor) else Tensor(np.asarray(seg, dtype=params.dtype))
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    if x.shape[1:] != (N_MELS, SEGMENT_FRAMES):
        raise ValueError(f"expected segment shape ({N_MELS}, {SEGMENT_FRAMES}), got {x.shape[1:]}")
    rng = np.random.default_rng(seed) if train_flag else None
    if mode == "embed":
        out = embed(x, params, train_flag, rng)
    elif mode == "classify":
        out = sigmoid(logits(x, params, train_flag, rng))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out[0] if single else out
