"""Numba-compiled strided 3-D convolution kernels.

Same contracts as the numpy kernels; loops are written so that every output
element is accumulated in a fixed order, which keeps results bit-reproducible.
Each kernel has two loop orders and the wrapper puts the wider channel axis
innermost, so refiner layers with a single channel on one side stay fast.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _conv3d(x, k, s1, s2, s3, y):
    n, o1, o2, o3, cout = y.shape
    k1, k2, k3, cin, _ = k.shape
    for b in range(n):
        for p in range(o1):
            for q in range(o2):
                for r in range(o3):
                    for a in range(k1):
                        for bb in range(k2):
                            for c in range(k3):
                                for ci in range(cin):
                                    xv = x[b, p * s1 + a, q * s2 + bb, r * s3 + c, ci]
                                    if xv == 0.0:
                                        continue
                                    for co in range(cout):
                                        y[b, p, q, r, co] += xv * k[a, bb, c, ci, co]
    return y


@njit(cache=True)
def _conv3d_reduce(x, k, s1, s2, s3, y):
    # inner loop over input channels; suits cout < cin
    n, o1, o2, o3, cout = y.shape
    k1, k2, k3, cin, _ = k.shape
    for b in range(n):
        for p in range(o1):
            for q in range(o2):
                for r in range(o3):
                    for co in range(cout):
                        acc = y[b, p, q, r, co]
                        for a in range(k1):
                            for bb in range(k2):
                                for c in range(k3):
                                    for ci in range(cin):
                                        acc += x[b, p * s1 + a, q * s2 + bb, r * s3 + c, ci] * k[a, bb, c, ci, co]
                        y[b, p, q, r, co] = acc
    return y


@njit(cache=True)
def _transconv3d(y, k, s1, s2, s3, out):
    n, i1, i2, i3, cin = y.shape
    k1, k2, k3, cout, _ = k.shape
    for b in range(n):
        for p in range(i1):
            for q in range(i2):
                for r in range(i3):
                    for ci in range(cin):
                        yv = y[b, p, q, r, ci]
                        if yv == 0.0:
                            continue
                        for a in range(k1):
                            for bb in range(k2):
                                for c in range(k3):
                                    for co in range(cout):
                                        out[b, p * s1 + a, q * s2 + bb, r * s3 + c, co] += (
                                            yv * k[a, bb, c, co, ci]
                                        )
    return out


@njit(cache=True)
def _transconv3d_reduce(y, k, s1, s2, s3, out):
    # inner loop over the transconv's input channels; suits cout < cin
    n, i1, i2, i3, cin = y.shape
    k1, k2, k3, cout, _ = k.shape
    for b in range(n):
        for p in range(i1):
            for q in range(i2):
                for r in range(i3):
                    for a in range(k1):
                        for bb in range(k2):
                            for c in range(k3):
                                for co in range(cout):
                                    acc = out[b, p * s1 + a, q * s2 + bb, r * s3 + c, co]
                                    for ci in range(cin):
                                        acc += y[b, p, q, r, ci] * k[a, bb, c, co, ci]
                                    out[b, p * s1 + a, q * s2 + bb, r * s3 + c, co] = acc
    return out


@njit(cache=True)
def _kernel_grad(x, gy, s1, s2, s3, dk):
    k1, k2, k3, cin, cout = dk.shape
    n, o1, o2, o3, _ = gy.shape
    for b in range(n):
        for p in range(o1):
            for q in range(o2):
                for r in range(o3):
                    for a in range(k1):
                        for bb in range(k2):
                            for c in range(k3):
                                for ci in range(cin):
                                    xv = x[b, p * s1 + a, q * s2 + bb, r * s3 + c, ci]
                                    if xv == 0.0:
                                        continue
                                    for co in range(cout):
                                        dk[a, bb, c, ci, co] += xv * gy[b, p, q, r, co]
    return dk


@njit(cache=True)
def _kernel_grad_reduce(x, gy, s1, s2, s3, dkt):
    # dkt is laid out (k1, k2, k3, cout, cin) so the inner cin loop is contiguous
    k1, k2, k3, cout, cin = dkt.shape
    n, o1, o2, o3, _ = gy.shape
    for b in range(n):
        for p in range(o1):
            for q in range(o2):
                for r in range(o3):
                    for a in range(k1):
                        for bb in range(k2):
                            for c in range(k3):
                                for co in range(cout):
                                    g = gy[b, p, q, r, co]
                                    if g == 0.0:
                                        continue
                                    for ci in range(cin):
                                        dkt[a, bb, c, co, ci] += x[b, p * s1 + a, q * s2 + bb, r * s3 + c, ci] * g
    return dkt


def conv3d(x, k, stride):
    k1, k2, k3, _, cout = k.shape
    s1, s2, s3 = stride
    shape = (
        x.shape[0],
        (x.shape[1] - k1) // s1 + 1,
        (x.shape[2] - k2) // s2 + 1,
        (x.shape[3] - k3) // s3 + 1,
        cout,
    )
    y = np.zeros(shape, dtype=x.dtype)
    impl = _conv3d if cout >= k.shape[3] else _conv3d_reduce
    return impl(np.ascontiguousarray(x), np.ascontiguousarray(k), s1, s2, s3, y)


def transconv3d(y, k, stride):
    n, i1, i2, i3, _ = y.shape
    k1, k2, k3, cout, _ = k.shape
    s1, s2, s3 = stride
    out = np.zeros(
        (n, (i1 - 1) * s1 + k1, (i2 - 1) * s2 + k2, (i3 - 1) * s3 + k3, cout),
        dtype=y.dtype,
    )
    impl = _transconv3d if cout >= k.shape[4] else _transconv3d_reduce
    return impl(np.ascontiguousarray(y), np.ascontiguousarray(k), s1, s2, s3, out)


def conv3d_kernel_grad(x, gy, stride, ksize):
    cin, cout = x.shape[4], gy.shape[4]
    s1, s2, s3 = stride
    x, gy = np.ascontiguousarray(x), np.ascontiguousarray(gy)
    if cout >= cin:
        dk = np.zeros(tuple(ksize) + (cin, cout), dtype=x.dtype)
        return _kernel_grad(x, gy, s1, s2, s3, dk)
    dkt = np.zeros(tuple(ksize) + (cout, cin), dtype=x.dtype)
    return np.ascontiguousarray(np.swapaxes(_kernel_grad_reduce(x, gy, s1, s2, s3, dkt), 3, 4))
