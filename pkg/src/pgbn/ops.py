"""Differentiable tensor operations.

Elementwise binary ops accept identical shapes, or a scalar (Python number
or size-1 tensor) against a tensor. Anything else must go through
:func:`broadcast_to` explicitly.
"""

from __future__ import annotations

import numpy as np

from pgbn import kernels
from pgbn.errors import ConfigurationError, ShapeError
from pgbn.tensor import Tensor, as_tensor


def _const(arr) -> Tensor:
    return Tensor._from_op(np.asarray(arr), (), None, "const")


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def _binary_operands(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    if a.shape == b.shape:
        return a, b
    if b.size == 1 and b.ndim <= a.ndim:
        return a, broadcast_to(reshape(b, ()), a.shape)
    if a.size == 1 and a.ndim <= b.ndim:
        return broadcast_to(reshape(a, ()), b.shape), b
    raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, neg(g)), "sub")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        return (mul(g, b) if a.requires_grad else None, mul(g, a) if b.requires_grad else None)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(g):
        ga = div(g, b) if a.requires_grad else None
        gb = neg(div(mul(g, a), square(b))) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data / b.data, (a, b), backward, "div")


def square(a: Tensor) -> Tensor:
    return Tensor._from_op(a.data * a.data, (a,), lambda g: (mul(g, mul(a, 2.0)),), "square")


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """Square root; ``eps`` only regularizes the derivative near zero."""

    def backward(g):
        return (div(g, mul(sqrt(add(a, eps) if eps else a, eps), 2.0)),)

    return Tensor._from_op(np.sqrt(a.data), (a,), backward, "sqrt")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = _const(np.sign(a.data))
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (mul(g, sign),), "abs")


def _sigmoid_np(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    def backward(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(1.0, s))),)

    return Tensor._from_op(_sigmoid_np(a.data), (a,), backward, "sigmoid")


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = _const(np.where(a.data > 0, 1.0, alpha).astype(a.dtype))
    return Tensor._from_op(a.data * slope.data, (a,), lambda g: (mul(g, slope),), "leaky_relu")


def step_ste(a: Tensor, slope: float = 1.0) -> Tensor:
    """Hard threshold ``x >= 0`` with the sigmoid-adjusted straight-through gradient.

    The backward pass returns ``g * slope * s * (1 - s)`` with ``s = sigmoid(slope * x)``.
    """

    def backward(g):
        s = sigmoid(mul(a, slope))
        return (mul(g, mul(mul(s, sub(1.0, s)), slope)),)

    out = (a.data >= 0).astype(a.dtype)
    return Tensor._from_op(out, (a,), backward, "dbn")


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axes, a.ndim)
    kept_shape = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    return Tensor._from_op(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(reduce_sum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),), "reshape")


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Numpy-style broadcast whose backward sums over the expanded axes."""
    shape = tuple(shape)
    src = a.shape
    lead = len(shape) - len(src)
    if lead < 0:
        raise ShapeError(f"cannot broadcast {src} to {shape}")
    expanded = tuple(range(lead)) + tuple(
        lead + i for i, d in enumerate(src) if d == 1 and shape[lead + i] != 1
    )

    def backward(g):
        return (reshape(reduce_sum(g, expanded), src) if expanded else reshape(g, src),)

    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor._from_op(out, (a,), backward, "broadcast")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inverse),), "transpose"
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            slice_axis(g, axis, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor._from_op(out, tensors, backward, "concat")


def pad(a: Tensor, widths) -> Tensor:
    """Zero-pad; ``widths`` is one ``(before, after)`` pair per axis."""
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    return Tensor._from_op(
        np.pad(a.data, widths), (a,), lambda g: (crop(g, widths),), "pad"
    )


def crop(a: Tensor, widths) -> Tensor:
    """Inverse of :func:`pad`: drop ``widths`` entries from each end of each axis."""
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    index = tuple(slice(lo, d - hi) for (lo, hi), d in zip(widths, a.shape))
    return Tensor._from_op(a.data[index], (a,), lambda g: (pad(g, widths),), "crop")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of size {a.shape[axis]}")
    widths = [(0, 0)] * a.ndim
    widths[axis] = (start, a.shape[axis] - stop)
    return crop(a, widths)


def _check_stride(stride):
    stride = tuple(int(s) for s in stride)
    if len(stride) != 3 or min(stride) < 1:
        raise ConfigurationError(f"stride must be three positive integers, got {stride}")
    return stride


def conv3d(x: Tensor, k: Tensor, stride=(1, 1, 1)) -> Tensor:
    """Valid (unpadded) strided convolution over axes 1..3 of a channels-last tensor."""
    stride = _check_stride(stride)
    if x.ndim != 5 or k.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and kernel, got {x.shape}, {k.shape}")
    if x.shape[4] != k.shape[3]:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape[4]} vs kernel {k.shape[3]}")
    for d, kk, s in zip(x.shape[1:4], k.shape[:3], stride):
        if d < kk or (d - kk) % s:
            raise ConfigurationError(
                f"conv3d: extent {d} with kernel {kk} and stride {s} does not tile exactly"
            )
    ksize = k.shape[:3]

    def backward(g):
        gx = transconv3d(g, k, stride) if x.requires_grad else None
        gk = conv3d_kernel_grad(x, g, stride, ksize) if k.requires_grad else None
        return gx, gk

    return Tensor._from_op(kernels.conv3d(x.data, k.data, stride), (x, k), backward, "conv3d")


def transconv3d(y: Tensor, k: Tensor, stride=(1, 1, 1)) -> Tensor:
    """Transposed convolution; output extent is ``(d - 1) * s + k`` on each axis.

    The kernel is ``(k1, k2, k3, cout, cin)``, the same array a :func:`conv3d`
    from ``cout`` to ``cin`` channels would use, so the two are adjoint.
    """
    stride = _check_stride(stride)
    if y.ndim != 5 or k.ndim != 5:
        raise ShapeError(f"transconv3d expects 5-D input and kernel, got {y.shape}, {k.shape}")
    if y.shape[4] != k.shape[4]:
        raise ShapeError(f"transconv3d channel mismatch: input {y.shape[4]} vs kernel {k.shape[4]}")
    ksize = k.shape[:3]

    def backward(g):
        gy = conv3d(g, k, stride) if y.requires_grad else None
        gk = conv3d_kernel_grad(g, y, stride, ksize) if k.requires_grad else None
        return gy, gk

    return Tensor._from_op(
        kernels.transconv3d(y.data, k.data, stride), (y, k), backward, "transconv3d"
    )


def conv3d_kernel_grad(x: Tensor, gy: Tensor, stride, ksize) -> Tensor:
    """Kernel gradient of :func:`conv3d`, itself differentiable (bilinear in x, gy)."""
    stride = _check_stride(stride)
    ksize = tuple(ksize)

    def backward(g):
        gx = transconv3d(gy, g, stride) if x.requires_grad else None
        ggy = conv3d(x, g, stride) if gy.requires_grad else None
        return gx, ggy

    data = kernels.conv3d_kernel_grad(x.data, gy.data, stride, ksize)
    return Tensor._from_op(data, (x, gy), backward, "conv3d_kernel_grad")
