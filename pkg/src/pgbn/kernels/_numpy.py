"""Pure-numpy strided 3-D convolution kernels.

All kernels use the channels-last layout ``(batch, d1, d2, d3, channels)``
and loop over kernel offsets, doing one matrix product per offset.
"""

import numpy as np


def _window(offset, count, stride):
    return slice(offset, offset + (count - 1) * stride + 1, stride)


def conv3d(x, k, stride):
    n = x.shape[0]
    k1, k2, k3, _, cout = k.shape
    s1, s2, s3 = stride
    o1 = (x.shape[1] - k1) // s1 + 1
    o2 = (x.shape[2] - k2) // s2 + 1
    o3 = (x.shape[3] - k3) // s3 + 1
    y = np.zeros((n, o1, o2, o3, cout), dtype=x.dtype)
    for a in range(k1):
        for b in range(k2):
            for c in range(k3):
                patch = x[:, _window(a, o1, s1), _window(b, o2, s2), _window(c, o3, s3), :]
                y += patch @ k[a, b, c]
    return y


def transconv3d(y, k, stride):
    n, i1, i2, i3, _ = y.shape
    k1, k2, k3, cout, _ = k.shape
    s1, s2, s3 = stride
    out = np.zeros(
        (n, (i1 - 1) * s1 + k1, (i2 - 1) * s2 + k2, (i3 - 1) * s3 + k3, cout),
        dtype=y.dtype,
    )
    for a in range(k1):
        for b in range(k2):
            for c in range(k3):
                out[:, _window(a, i1, s1), _window(b, i2, s2), _window(c, i3, s3), :] += (
                    y @ k[a, b, c].T
                )
    return out


def conv3d_kernel_grad(x, gy, stride, ksize):
    k1, k2, k3 = ksize
    _, o1, o2, o3, cout = gy.shape
    cin = x.shape[4]
    s1, s2, s3 = stride
    dk = np.empty((k1, k2, k3, cin, cout), dtype=x.dtype)
    g2 = gy.reshape(-1, cout)
    for a in range(k1):
        for b in range(k2):
            for c in range(k3):
                patch = x[:, _window(a, o1, s1), _window(b, o2, s2), _window(c, o3, s3), :]
                dk[a, b, c] = patch.reshape(-1, cin).T @ g2
    return dk
