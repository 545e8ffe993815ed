"""Layers with hand-written backward passes.

Every layer caches what it needs during ``forward`` and consumes that cache in
``backward``, which returns the gradient w.r.t. the layer input and accumulates
parameter gradients into ``Parameter.grad``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import FrozenModelError, ShapeError

DEFAULT_DTYPE = np.float32


class Parameter:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


class Module:
    """Base class: named parameters, train/eval switch, freezing."""

    def __init__(self):
        self.training = True
        self.frozen = False

    # subclasses list their parameters / children in definition order
    def _own_parameters(self) -> list[tuple[str, Parameter]]:
        return []

    def _own_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def children(self) -> list[tuple[str, "Module"]]:
        return []

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._own_parameters():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._own_buffers():
            yield prefix + name, b
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        self.frozen = True
        self.eval()
        for _, child in self.children():
            child.freeze()
        for p in self.parameters():
            p.value.setflags(write=False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def _check_trainable(self):
        if self.frozen:
            raise FrozenModelError(f"{type(self).__name__} is frozen; gradients are not available")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    """Cross-correlation over the last axis of a (batch, channels, length) array."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, padding: int = 0,
                 rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        bound = 1.0 / np.sqrt(in_channels * kernel_size)
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel_size), dtype))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,), dtype))
        self._cache = None

    def _own_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def output_length(self, length: int) -> int:
        return length + 2 * self.padding - self.kernel_size + 1

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv1d expects input (batch, {self.in_channels}, length), got {x.shape}; "
                f"weight shape {self.weight.shape}")
        B, C, L = x.shape
        L_out = self.output_length(L)
        if L_out < 1:
            raise ShapeError(f"input {x.shape} shorter than kernel span of weight {self.weight.shape}")
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding))) if self.padding else x
        # (B, C, L_out, K) -> (B*L_out, C*K)
        cols = sliding_window_view(xp, self.kernel_size, axis=2).transpose(0, 2, 1, 3)
        cols = cols.reshape(B * L_out, C * self.kernel_size)
        w2 = self.weight.value.reshape(self.out_channels, -1)
        out = cols @ w2.T + self.bias.value
        if not self.frozen:
            self._cache = (cols, xp.shape)
        return out.reshape(B, L_out, self.out_channels).transpose(0, 2, 1)

    def backward(self, grad):
        self._check_trainable()
        cols, padded_shape = self._cache
        B, C, Lp = padded_shape
        O, K = self.out_channels, self.kernel_size
        L_out = grad.shape[2]
        g2 = grad.transpose(0, 2, 1).reshape(B * L_out, O)
        self.weight.grad += (g2.T @ cols).reshape(self.weight.shape)
        self.bias.grad += g2.sum(axis=0, dtype=np.float64).astype(self.bias.value.dtype)
        # input gradient = full correlation of grad with the flipped kernel
        gp = np.pad(grad, ((0, 0), (0, 0), (K - 1, K - 1)))
        L = Lp - 2 * self.padding
        gcols = sliding_window_view(gp, K, axis=2)[:, :, self.padding:self.padding + L]
        gcols = gcols.transpose(0, 2, 1, 3).reshape(B * L, O * K)
        w_flip = self.weight.value[:, :, ::-1].transpose(0, 2, 1).reshape(O * K, C)
        return (gcols @ w_flip).reshape(B, L, C).transpose(0, 2, 1)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features), dtype))
        self.bias = Parameter(_uniform(rng, bound, (out_features,), dtype))
        self._x = None

    def _own_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects (batch, {self.in_features}), got {x.shape}; "
                             f"weight shape {self.weight.shape}")
        if not self.frozen:
            self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        self._check_trainable()
        self.weight.grad += grad.T @ self._x
        self.bias.grad += grad.sum(axis=0, dtype=np.float64).astype(self.bias.value.dtype)
        return grad @ self.weight.value


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        if not self.frozen:
            self._mask = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        self._check_trainable()
        return grad * self._mask


def _sigmoid(x):
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


class Swish(Module):
    def forward(self, x):
        s = _sigmoid(x)
        if not self.frozen:
            self._cache = (x, s)
        return x * s

    def backward(self, grad):
        self._check_trainable()
        x, s = self._cache
        return grad * (s * (1.0 + x * (1.0 - s)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def swish(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return x * _sigmoid(np.atleast_1d(x)).reshape(x.shape)


class MaxPool1d(Module):
    """Non-overlapping max pooling; trailing samples that do not fill a window are dropped."""

    def __init__(self, kernel_size: int = 2):
        super().__init__()
        self.kernel_size = kernel_size

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] < self.kernel_size:
            raise ShapeError(f"max pool needs (batch, channels, length >= {self.kernel_size}), got {x.shape}")
        B, C, L = x.shape
        k = self.kernel_size
        L_out = L // k
        windows = x[:, :, :L_out * k].reshape(B, C, L_out, k)
        idx = windows.argmax(axis=3)  # first index wins ties
        out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
        if not self.frozen:
            self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        self._check_trainable()
        idx, shape = self._cache
        B, C, L = shape
        k = self.kernel_size
        L_out = grad.shape[2]
        dwin = np.zeros((B, C, L_out, k), dtype=grad.dtype)
        np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=3)
        dx = np.zeros(shape, dtype=grad.dtype)
        dx[:, :, :L_out * k] = dwin.reshape(B, C, L_out * k)
        return dx


class AdaptiveAvgPool1d(Module):
    """Adaptive average pooling; only ``output_size=1`` (per-channel mean) is supported."""

    def __init__(self, output_size: int = 1):
        super().__init__()
        if output_size != 1:
            raise ValueError("only output_size=1 is supported")
        self.output_size = output_size

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] == 0:
            raise ShapeError(f"adaptive pool needs non-empty (batch, channels, length), got {x.shape}")
        self._length = x.shape[2]
        return x.mean(axis=2, keepdims=True, dtype=np.float64).astype(x.dtype)

    def backward(self, grad):
        self._check_trainable()
        return np.repeat(grad / self._length, self._length, axis=2)


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        self._check_trainable()
        return grad.reshape(self._shape)


class BatchNorm1d(Module):
    """Per-channel batch normalization for (batch, channels[, length]) input."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(num_features, dtype=dtype))
        self.beta = Parameter(np.zeros(num_features, dtype=dtype))
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def _own_parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def _own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _axes(self, x):
        if x.ndim == 3:
            return (0, 2), (1, -1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ShapeError(f"batch norm expects 2-D or 3-D input, got {x.shape}")

    def forward(self, x):
        if x.shape[1] != self.num_features:
            raise ShapeError(f"batch norm over {self.num_features} channels got input {x.shape}")
        axes, bshape = self._axes(x)
        batch_stats = self.training and not self.frozen
        if batch_stats:
            if x.shape[0] < 2:
                raise ValueError("batch norm in training mode needs batch size >= 2")
            n = x.size // self.num_features
            mean = x.mean(axis=axes, dtype=np.float64)
            var = x.var(axis=axes, dtype=np.float64)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * n / max(n - 1, 1)
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mean.astype(x.dtype).reshape(bshape)) * inv_std.reshape(bshape)
        if not self.frozen:
            self._cache = (xhat, inv_std, axes, bshape, batch_stats)
        return xhat * self.gamma.value.reshape(bshape) + self.beta.value.reshape(bshape)

    def backward(self, grad):
        self._check_trainable()
        xhat, inv_std, axes, bshape, batch_stats = self._cache
        n = grad.size // self.num_features
        self.gamma.grad += (grad * xhat).sum(axis=axes, dtype=np.float64).astype(self.gamma.value.dtype)
        self.beta.grad += grad.sum(axis=axes, dtype=np.float64).astype(self.beta.value.dtype)
        dxhat = grad * self.gamma.value.reshape(bshape)
        if not batch_stats:
            return dxhat * inv_std.reshape(bshape)
        s1 = dxhat.sum(axis=axes, dtype=np.float64).astype(grad.dtype).reshape(bshape)
        s2 = (dxhat * xhat).sum(axis=axes, dtype=np.float64).astype(grad.dtype).reshape(bshape)
        return (inv_std.reshape(bshape) / n) * (n * dxhat - s1 - xhat * s2)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, grad):
        self._check_trainable()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
