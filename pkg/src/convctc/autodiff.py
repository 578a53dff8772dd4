"""Numeric core: the handful of layers the network needs, each with an exact backward.

Tensors are plain ``float64`` arrays of shape ``(channels, time)``.  Every
forward returns ``(output, cache)``; the matching ``*_backward`` takes the
upstream gradient and the cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass
class Conv1dParams:
    weight: np.ndarray  # (out, in, kernel)
    bias: np.ndarray  # (out,)
    dilation: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 3 or self.weight.shape[2] < 1:
            raise ShapeError(f"weight must be (out, in, kernel), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} outputs")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @classmethod
    def init(cls, in_ch: int, out_ch: int, kernel: int = 1, dilation: int = 1,
             rng: np.random.Generator | None = None) -> "Conv1dParams":
        rng = rng or np.random.default_rng(0)
        bound = math.sqrt(6.0 / (in_ch * kernel + out_ch * kernel))
        return cls(rng.uniform(-bound, bound, size=(out_ch, in_ch, kernel)), np.zeros(out_ch), dilation)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def init(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormParams":
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels), momentum, eps)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


# --------------------------------------------------------------------------
# convolution


def _pad_amounts(kernel: int, dilation: int) -> tuple[int, int]:
    total = (kernel - 1) * dilation
    return total // 2, total - total // 2


def dilated_conv1d(x: np.ndarray, p: Conv1dParams):
    """'Same'-length dilated convolution with symmetric zero padding.

    y[o, t] = bias[o] + sum_{i,k} weight[o, i, k] * x_padded[i, t + k*d]
    """
    if x.ndim != 2 or x.shape[0] != p.weight.shape[1]:
        raise ShapeError(f"input has {x.shape[0] if x.ndim == 2 else x.shape} channels, conv expects {p.weight.shape[1]}")
    K, d = p.kernel_size, p.dilation
    T = x.shape[1]
    left, right = _pad_amounts(K, d)
    xp = np.pad(x, ((0, 0), (left, right))) if left or right else x
    y = p.weight[:, :, 0] @ xp[:, 0:T]
    for k in range(1, K):
        y += p.weight[:, :, k] @ xp[:, k * d:k * d + T]
    y += p.bias[:, None]
    return y, (xp, p, T, left)


def dilated_conv1d_backward(dy: np.ndarray, cache):
    xp, p, T, left = cache
    K, d = p.kernel_size, p.dilation
    dW = np.empty_like(p.weight)
    dxp = np.zeros_like(xp)
    for k in range(K):
        window = slice(k * d, k * d + T)
        dW[:, :, k] = dy @ xp[:, window].T
        dxp[:, window] += p.weight[:, :, k].T @ dy
    dx = dxp[:, left:left + T]
    return dx, {"weight": dW, "bias": dy.sum(axis=1)}


def conv1x1(x: np.ndarray, p: Conv1dParams):
    if p.kernel_size != 1 or p.dilation != 1:
        raise ShapeError(f"conv1x1 needs kernel 1 / dilation 1, got {p.kernel_size} / {p.dilation}")
    return dilated_conv1d(x, p)


conv1x1_backward = dilated_conv1d_backward


# --------------------------------------------------------------------------
# activations and elementwise helpers


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gated_activation(xf: np.ndarray, xg: np.ndarray):
    """z = tanh(xf) * sigmoid(xg)."""
    if xf.shape != xg.shape:
        raise ShapeError(f"filter {xf.shape} and gate {xg.shape} shapes differ")
    t = np.tanh(xf)
    s = sigmoid(xg)
    return t * s, (t, s)


def gated_activation_backward(dz: np.ndarray, cache):
    t, s = cache
    return dz * (1.0 - t * t) * s, dz * t * s * (1.0 - s)


def relu(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy: np.ndarray, mask):
    return dy * mask


def add(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return a + b, None


def add_backward(dy: np.ndarray, cache=None):
    return dy, dy


def scale(x: np.ndarray, c: float):
    return c * x, c


def scale_backward(dy: np.ndarray, c: float):
    return c * dy


# --------------------------------------------------------------------------
# batch normalisation over the time axis


def batch_norm(x: np.ndarray, p: BatchNormParams, mode: str = "train"):
    """Per-channel normalisation.  Train mode uses statistics over time and
    updates the running averages in place."""
    if x.ndim != 2 or x.shape[0] != p.gamma.shape[0]:
        raise ShapeError(f"input has {x.shape[0]} channels, batch norm has {p.gamma.shape[0]}")
    if mode == "train":
        if x.shape[1] < 2:
            raise ValueError("batch norm in train mode needs at least 2 time steps")
        mean = x.mean(axis=1)
        var = x.var(axis=1)
        n = x.shape[1]
        p.running_mean *= 1.0 - p.momentum
        p.running_mean += p.momentum * mean
        p.running_var *= 1.0 - p.momentum
        p.running_var += p.momentum * var * n / (n - 1)
    elif mode == "infer":
        mean, var = p.running_mean, p.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean[:, None]) * inv_std[:, None]
    y = p.gamma[:, None] * xhat + p.beta[:, None]
    return y, (xhat, inv_std, p.gamma, mode)


def batch_norm_backward(dy: np.ndarray, cache):
    xhat, inv_std, gamma, mode = cache
    dgamma = (dy * xhat).sum(axis=1)
    dbeta = dy.sum(axis=1)
    dxhat = dy * gamma[:, None]
    if mode == "infer":
        dx = dxhat * inv_std[:, None]
    else:
        dx = inv_std[:, None] * (
            dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
    return dx, {"gamma": dgamma, "beta": dbeta}


# --------------------------------------------------------------------------
# finite-difference checking


def grad_check(f: Callable, inputs: Sequence[np.ndarray], h: float = 1e-4,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f(*inputs)`` must return ``(scalar, [grad per input])``.  Inputs are
    perturbed in place and restored.  With ``max_coords`` only that many
    randomly chosen coordinates per input are probed.
    """
    _, analytic = f(*inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, g in zip(inputs, analytic):
        flat = x.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = np.asarray(g).reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs)[0]
            flat[i] = orig - h
            fm = f(*inputs)[0]
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = gflat[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
