"""Layers built on the tensor ops: batch norm, dropout, LSTM cells, modules."""
from __future__ import annotations

import math

import numpy as np

from .conv import conv_nd
from .tensor import ShapeError, Tensor, _result, add, as_tensor, concat, matmul, mul, sigmoid, tanh

BN_EPS = 1e-5


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis except 1.

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the running buffers.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} vs {c} channels")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    g_ = gamma.data.reshape(bshape)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm: training mode needs a batch of at least 2")
        n = x.data.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c) * n / max(n - 1, 1)

        def backward(g):
            gx = None
            if x.requires_grad:
                dxhat = g * g_
                gx = inv / n * (
                    n * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(bshape)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(bshape)) * inv

        def backward(g):
            return g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    y = (xhat * g_ + beta.data.reshape(bshape)).astype(x.dtype)
    return _result(y, (x, gamma, beta), backward, "batch_norm")


def dropout(x, rate: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    return mul(x, (keep / (1.0 - rate)).astype(x.dtype))


def _split_gates(gates: Tensor, axis: int):
    h = gates.shape[axis] // 4
    idx = [slice(None)] * gates.ndim
    parts = []
    for k in range(4):
        idx[axis] = slice(k * h, (k + 1) * h)
        parts.append(gates[tuple(idx)])
    return parts


def _lstm_update(gates: Tensor, c: Tensor, axis: int):
    i, f, g, o = _split_gates(gates, axis)
    c_new = add(mul(sigmoid(f), c), mul(sigmoid(i), tanh(g)))
    h_new = mul(sigmoid(o), tanh(c_new))
    return h_new, c_new


def lstm_cell(x, h, c, w_x, w_h, b):
    """One LSTM step; gate order along the last axis is (input, forget, cell, output)."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hidden = c.shape[-1]
    if h.shape != c.shape or as_tensor(w_x).shape != (x.shape[-1], 4 * hidden) \
            or as_tensor(w_h).shape != (hidden, 4 * hidden):
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}, "
            f"w_x {as_tensor(w_x).shape}, w_h {as_tensor(w_h).shape}"
        )
    gates = add(add(matmul(x, w_x), matmul(h, w_h)), b)
    return _lstm_update(gates, c, axis=-1)


def conv_lstm_cell(x, h, c, w, b):
    """Convolutional LSTM step on (N, C, H, W) maps; 'same' padding keeps H, W."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    if h.shape != c.shape or x.shape[0] != h.shape[0] or x.shape[2:] != h.shape[2:]:
        raise ShapeError(f"conv_lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}")
    k = as_tensor(w).shape[-1]
    gates = conv_nd(concat([x, h], axis=1), w, b, stride=1, padding=k // 2)
    return _lstm_update(gates, c, axis=1)


# -- modules --------------------------------------------------------------------
class Module:
    """Attribute-walking parameter container, loosely after torch.nn.Module."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
        for name, buf in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", buf

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {src.shape} vs model {arr.shape}")
            arr[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(rng: np.random.Generator, shape, bound: float, dtype) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng, (n_in, n_out), bound, dtype)
        self.bias = _param(rng, (n_out,), bound, dtype)

    def forward(self, x):
        return add(matmul(x, self.weight), self.bias)


class ConvNd(Module):
    def __init__(self, n_in: int, n_out: int, kernel, rng: np.random.Generator, stride=1,
                 padding=0, groups: int = 1, bias: bool = True, nd: int = 2, dtype=np.float32):
        kernel = (kernel,) * nd if isinstance(kernel, int) else tuple(kernel)
        fan_in = n_in // groups * int(np.prod(kernel))
        # He-uniform; these convolutions feed ReLU
        self.weight = _param(rng, (n_out, n_in // groups) + kernel, math.sqrt(6.0 / fan_in), dtype)
        self.bias = _param(rng, (n_out,), 1.0 / math.sqrt(fan_in), dtype) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return conv_nd(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Conv2d(ConvNd):
    def __init__(self, n_in, n_out, kernel, rng, stride=1, padding=0, groups=1, bias=True, dtype=np.float32):
        super().__init__(n_in, n_out, kernel, rng, stride, padding, groups, bias, 2, dtype)


class Conv3d(ConvNd):
    def __init__(self, n_in, n_out, kernel, rng, stride=1, padding=0, groups=1, bias=True, dtype=np.float32):
        super().__init__(n_in, n_out, kernel, rng, stride, padding, groups, bias, 3, dtype)


class BatchNorm(Module):
    """Batch norm over channel axis 1 for 2D and 3D feature maps."""

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float32):
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.momentum = momentum
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x):
        return batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                          self._buffers["running_var"], self.training, self.momentum)


class Dropout(Module):
    def __init__(self, rate: float, seed: int):
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        return dropout(x, self.rate, self.training, self.rng)


class LSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_x = _param(rng, (n_in, 4 * hidden), bound, dtype)
        self.w_h = _param(rng, (hidden, 4 * hidden), bound, dtype)
        self.bias = _param(rng, (4 * hidden,), bound, dtype)

    def forward(self, x, h, c):
        return lstm_cell(x, h, c, self.w_x, self.w_h, self.bias)


class ConvLSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, kernel: int, rng: np.random.Generator, dtype=np.float32):
        fan_in = (n_in + hidden) * kernel * kernel
        bound = 1.0 / math.sqrt(fan_in)
        self.hidden = hidden
        self.weight = _param(rng, (4 * hidden, n_in + hidden, kernel, kernel), bound, dtype)
        self.bias = _param(rng, (4 * hidden,), bound, dtype)

    def forward(self, x, h, c):
        return conv_lstm_cell(x, h, c, self.weight, self.bias)
