"""Minimal float64 layers with explicit forward and backward passes.

Every layer is a Module that caches what its backward pass needs during
forward and accumulates parameter gradients into Param.grad. A backward
call consumes the cache, so backward before forward (or twice per
forward) is a programming error and raises. Batched inputs use the
(batch, time, channels) layout.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A trainable array with an accumulated gradient of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape})"


def glorot_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]
) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base for layers: forward caches, backward consumes the cache."""

    _cache: object | None = None

    def params(self) -> list[Param]:
        return []

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a pending forward"
            )
        cache = self._cache
        self._cache = None
        return cache


class Sequential(Module):
    """Chains modules; backward runs the children in reverse order."""

    def __init__(self, *children: Module):
        self.children = list(children)

    def params(self) -> list[Param]:
        out: list[Param] = []
        for child in self.children:
            out.extend(child.params())
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for child in self.children:
            x = child.forward(x)
        return x

    def backward(self, gout: np.ndarray) -> np.ndarray:
        for child in reversed(self.children):
            gout = child.backward(gout)
        return gout


class Linear(Module):
    """Affine map (B, n_in) -> (B, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "linear"):
        self.weight = Param(f"{name}.weight", glorot_uniform(rng, n_in, n_out, (n_in, n_out)))
        self.bias = Param(f"{name}.bias", np.zeros(n_out))

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gout: np.ndarray) -> np.ndarray:
        x = self._take_cache()
        self.weight.grad += x.T @ gout
        self.bias.grad += gout.sum(axis=0)
        return gout @ self.weight.value.T


class ReLU(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        mask = x > 0.0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        mask = self._take_cache()
        return np.where(mask, gout, 0.0)


class Tanh(Module):
    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, gout: np.ndarray) -> np.ndarray:
        out = self._take_cache()
        return gout * (1.0 - out * out)


class Conv1d(Module):
    """Causal 1-D convolution over time, output length equal to input.

    Zeros are prepended on the past side, so tap k-1 of the kernel reads
    the current step and earlier taps reach back in time. Input
    (B, T, c_in) maps to (B, T, c_out); the kernel is applied as one
    matmul over unrolled patches.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        name: str = "conv",
    ):
        if kernel < 1:
            raise ValueError(f"kernel width must be >= 1, got {kernel}")
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.weight = Param(
            f"{name}.weight",
            glorot_uniform(rng, kernel * c_in, kernel * c_out, (kernel, c_in, c_out)),
        )
        self.bias = Param(f"{name}.bias", np.zeros(c_out))

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        batch, n_time, c_in = x.shape
        if c_in != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c_in}")
        k = self.kernel
        padded = np.concatenate([np.zeros((batch, k - 1, c_in)), x], axis=1)
        # patches[b, t, tap, c] = padded[b, t + tap, c]
        patches = np.stack([padded[:, tap : tap + n_time] for tap in range(k)], axis=2)
        patches = patches.reshape(batch, n_time, k * c_in)
        self._cache = patches
        flat_w = self.weight.value.reshape(k * c_in, self.c_out)
        return patches @ flat_w + self.bias.value

    def backward(self, gout: np.ndarray) -> np.ndarray:
        patches = self._take_cache()
        batch, n_time, _ = gout.shape
        k, c_in = self.kernel, self.c_in
        flat_patches = patches.reshape(batch * n_time, k * c_in)
        flat_g = gout.reshape(batch * n_time, self.c_out)
        self.weight.grad += (flat_patches.T @ flat_g).reshape(self.weight.value.shape)
        self.bias.grad += flat_g.sum(axis=0)
        flat_w = self.weight.value.reshape(k * c_in, self.c_out)
        gpatches = (flat_g @ flat_w.T).reshape(batch, n_time, k, c_in)
        gpadded = np.zeros((batch, n_time + k - 1, c_in))
        for tap in range(k):
            gpadded[:, tap : tap + n_time] += gpatches[:, :, tap]
        return gpadded[:, k - 1 :]


class MaxPool1d(Module):
    """Max pooling over time with floor semantics; a trailing partial
    window is dropped. Ties go to the earliest position."""

    def __init__(self, pool: int = 2, stride: int = 2):
        if pool < 1 or stride < 1:
            raise ValueError(f"pool and stride must be >= 1, got {pool}, {stride}")
        self.pool = pool
        self.stride = stride

    def forward(self, x: np.ndarray) -> np.ndarray:
        batch, n_time, channels = x.shape
        if n_time < self.pool:
            raise ValueError(f"time axis {n_time} shorter than pool window {self.pool}")
        n_out = (n_time - self.pool) // self.stride + 1
        starts = np.arange(n_out) * self.stride
        windows = x[:, starts[:, None] + np.arange(self.pool)]
        idx = windows.argmax(axis=2)
        out = np.take_along_axis(windows, idx[:, :, None], axis=2).squeeze(axis=2)
        self._cache = (idx, starts, x.shape)
        return out

    def backward(self, gout: np.ndarray) -> np.ndarray:
        idx, starts, in_shape = self._take_cache()
        batch, n_time, channels = in_shape
        pos = starts[None, :, None] + idx
        gin = np.zeros(in_shape)
        b_idx = np.arange(batch)[:, None, None]
        c_idx = np.arange(channels)[None, None, :]
        if self.stride >= self.pool:
            # windows are disjoint, every input position has one writer
            gin[b_idx, pos, c_idx] = gout
        else:
            np.add.at(gin, (b_idx, pos, c_idx), gout)
        return gin


class Flatten(Module):
    """(B, T, C) -> (B, T*C)."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        shape = self._take_cache()
        return gout.reshape(shape)


class Reshape(Module):
    """(B, n) -> (B, *shape) with n preserved."""

    def __init__(self, *shape: int):
        self.shape = shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        shape = self._take_cache()
        return gout.reshape(shape)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax; the max is subtracted before exponentiation."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, gout: np.ndarray, axis: int = -1) -> np.ndarray:
    """Pull a gradient back through y = softmax(x)."""
    dot = (gout * y).sum(axis=axis, keepdims=True)
    return y * (gout - dot)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss of an empty batch is undefined")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff
