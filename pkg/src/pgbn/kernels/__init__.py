"""Convolution kernel dispatch.

The hot loops (strided 3-D convolution, its transpose and its kernel
gradient) have two implementations: numba-compiled loops and a pure-numpy
path. ``PGBN_BACKEND=numba|numpy`` picks one at import time; the default is
numba when it is importable. :func:`set_backend` switches at runtime.
"""

import logging
import os

from . import _numpy

logger = logging.getLogger(__name__)

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba

_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel implementation by name and return the previous one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    previous = _active
    _active = name
    return previous


def get_backend():
    return _active


def _initial_backend():
    requested = os.environ.get("PGBN_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            logger.warning("PGBN_BACKEND=%s unavailable, falling back to numpy", requested)
            return "numpy"
        return requested
    return "numba" if "numba" in _BACKENDS else "numpy"


_active = _initial_backend()


def conv3d(x, k, stride):
    """Valid strided convolution: ``(n, d1, d2, d3, cin) * (k1, k2, k3, cin, cout)``."""
    return _BACKENDS[_active].conv3d(x, k, stride)


def transconv3d(y, k, stride):
    """Transpose of :func:`conv3d`; the kernel is laid out ``(k1, k2, k3, cout, cin)``."""
    return _BACKENDS[_active].transconv3d(y, k, stride)


def conv3d_kernel_grad(x, gy, stride, ksize):
    """Gradient of ``<conv3d(x, k), gy>`` with respect to ``k``."""
    return _BACKENDS[_active].conv3d_kernel_grad(x, gy, stride, ksize)
