"""Progressive-GAN building blocks and binary neurons.

Weights are stored as raw N(0, 1) draws and scaled at every forward pass by
``sqrt(2 / fan_in)`` (equalized learning rate). Fan-in is the product of the
kernel extents and the input channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from pgbn import ops
from pgbn.errors import ConfigurationError
from pgbn.tensor import Tensor

LEAKY_SLOPE = 0.2
PIXELNORM_EPS = 1e-8
STDDEV_EPS = 1e-8


def equalized_scale(fan_in: int) -> float:
    """Return ``c = sqrt(fan_in / 2)``; effective weights are ``w / c``."""
    if fan_in < 1:
        raise ConfigurationError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(fan_in / 2.0)


def pixelnorm(a: Tensor, epsilon: float = PIXELNORM_EPS, axis: int = -1) -> Tensor:
    """Normalize each location's channel vector to unit root-mean-square."""
    ms = ops.reduce_mean(ops.square(a), axis, keepdims=True)
    return ops.div(a, ops.broadcast_to(ops.sqrt(ops.add(ms, epsilon)), a.shape))


def minibatch_stddev(x: Tensor, eps: float = STDDEV_EPS) -> Tensor:
    """Append one channel holding the mean per-feature batch standard deviation.

    Uses the population deviation. ``eps`` only keeps the derivative finite
    when the whole batch is identical; the forward value is exact.
    """
    if x.shape[0] < 2:
        raise ConfigurationError("minibatch_stddev needs a batch of at least 2")
    mu = ops.broadcast_to(ops.reduce_mean(x, 0, keepdims=True), x.shape)
    var = ops.reduce_mean(ops.square(ops.sub(x, mu)), 0)
    stat = ops.reduce_mean(ops.sqrt(var, eps))
    extra = ops.broadcast_to(ops.reshape(stat, (1,) * x.ndim), x.shape[:-1] + (1,))
    return ops.concat([x, extra], axis=-1)


@dataclass(frozen=True)
class DbnState:
    """Sigmoid slope used by the straight-through estimator, annealed per epoch."""

    slope: float = 1.0
    anneal_factor: float = 1.1

    def __post_init__(self):
        if self.slope <= 0:
            raise ConfigurationError(f"slope must be positive, got {self.slope}")


def anneal_slope(state: DbnState) -> DbnState:
    return replace(state, slope=state.slope * state.anneal_factor)


def dbn_forward(x: Tensor, state: DbnState) -> Tensor:
    """Deterministic binary neuron: 1 where ``x >= 0``, else 0.

    ``sigmoid(slope * x) >= 0.5`` iff ``x >= 0`` for any positive slope, so the
    slope only affects the backward pass.
    """
    return ops.step_ste(x, state.slope)


def dbn_backward(upstream, x, state: DbnState) -> np.ndarray:
    """Straight-through gradient ``upstream * slope * s * (1 - s)``, ``s = sigmoid(slope * x)``."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    up = np.asarray(upstream.data if isinstance(upstream, Tensor) else upstream, dtype=float)
    s = ops._sigmoid_np(state.slope * x)
    return up * state.slope * s * (1.0 - s)


def _standard_normal(rng: np.random.Generator, shape, dtype) -> Tensor:
    return Tensor(rng.standard_normal(shape).astype(dtype), requires_grad=True)


class Dense:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = _standard_normal(rng, (fan_in, fan_out), dtype)
        self.bias = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True)
        self.fan_in = fan_in

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        w = ops.mul(self.weight, 1.0 / equalized_scale(self.fan_in))
        y = ops.matmul(x, w)
        return ops.add(y, ops.broadcast_to(self.bias, y.shape))


class Conv3d:
    """Strided valid convolution; ``padding`` adds zeros on axes 1..3 first."""

    def __init__(self, cin, cout, kernel, stride, rng, dtype=np.float64, padding=(0, 0, 0)):
        self.kernel_size = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.weight = _standard_normal(rng, self.kernel_size + (cin, cout), dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.fan_in = int(np.prod(self.kernel_size)) * cin

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        if any(self.padding):
            x = ops.pad(x, [(0, 0)] + [(p, p) for p in self.padding] + [(0, 0)])
        w = ops.mul(self.weight, 1.0 / equalized_scale(self.fan_in))
        y = ops.conv3d(x, w, self.stride)
        return ops.add(y, ops.broadcast_to(self.bias, y.shape))


class TransConv3d:
    def __init__(self, cin, cout, kernel, stride, rng, dtype=np.float64):
        self.kernel_size = tuple(kernel)
        self.stride = tuple(stride)
        self.weight = _standard_normal(rng, self.kernel_size + (cout, cin), dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        self.fan_in = int(np.prod(self.kernel_size)) * cin

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        w = ops.mul(self.weight, 1.0 / equalized_scale(self.fan_in))
        y = ops.transconv3d(x, w, self.stride)
        return ops.add(y, ops.broadcast_to(self.bias, y.shape))


class ResidualUnit:
    """``x + conv_b(act(conv_a(act(x))))`` with same-padded (1, 3, 3) kernels."""

    def __init__(self, channels: int, hidden: int, rng, dtype=np.float64, kernel=(1, 3, 3)):
        padding = tuple(k // 2 for k in kernel)
        if any(k % 2 == 0 for k in kernel):
            raise ConfigurationError(f"same-padding needs odd kernel extents, got {kernel}")
        self.conv_a = Conv3d(channels, hidden, kernel, (1, 1, 1), rng, dtype, padding)
        self.conv_b = Conv3d(hidden, channels, kernel, (1, 1, 1), rng, dtype, padding)

    def parameters(self):
        return {
            "conv_a/weight": self.conv_a.weight,
            "conv_a/bias": self.conv_a.bias,
            "conv_b/weight": self.conv_b.weight,
            "conv_b/bias": self.conv_b.bias,
        }

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv_a(ops.leaky_relu(x, LEAKY_SLOPE))
        h = self.conv_b(ops.leaky_relu(h, LEAKY_SLOPE))
        return ops.add(x, h)
