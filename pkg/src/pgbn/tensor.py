"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op records a backward closure whose body is itself
written with tensor ops. Running the backward pass with ``create_graph=True``
therefore records a new graph, which is what the gradient penalty needs
(a loss that depends on an input gradient).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf enters a tensor or shows up after a step."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def enable_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional real array with optional gradient tracking.

    ``grad`` holds a plain ndarray that accumulates across :func:`backward`
    calls until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else _infer_dtype(data))
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, (), None, "detach")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    # operator sugar; implementations live in pgbn.ops
    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __rtruediv__(self, other):
        return _ops.div(other, self)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def sum(self, axes=None, keepdims=False):
        return _ops.reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return _ops.reduce_mean(self, axes, keepdims)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype.kind == "f":
        return data.dtype
    if isinstance(data, Tensor):
        return data.dtype
    return DEFAULT_DTYPE


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    arr = np.asarray(value, dtype=dtype if dtype is not None else _infer_dtype(value))
    return Tensor._from_op(arr, (), None, "const")


def _topological_order(root: Tensor) -> list:
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _backprop(root: Tensor, seed: Tensor, create_graph: bool, keep: set) -> dict:
    """Propagate ``seed`` from ``root``; return gradients of leaves and ``keep`` ids."""
    order = _topological_order(root)
    pending = {id(root): seed}
    collected = {}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if id(node) in keep or node._backward is None:
                collected[id(node)] = (node, g)
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else _ops.add(pending[key], pg)
    return collected


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seed = as_tensor(np.ones(loss.shape, dtype=loss.dtype))
    for node, g in _backprop(loss, seed, False, set()).values():
        if node._backward is not None:
            continue
        if node.grad is None:
            node.grad = g.data.copy()
        else:
            node.grad = node.grad + g.data


def grad(output: Tensor, inputs: Iterable[Tensor], create_graph: bool = False) -> list:
    """Return d(output)/d(input) for each input without touching ``.grad``.

    With ``create_graph=True`` the returned tensors are themselves
    differentiable.
    """
    inputs = list(inputs)
    if output.size != 1:
        raise ValueError(f"grad() needs a scalar output, got shape {output.shape}")
    results = []
    collected = {}
    if output.requires_grad:
        seed = as_tensor(np.ones(output.shape, dtype=output.dtype))
        collected = _backprop(output, seed, create_graph, {id(t) for t in inputs})
    for t in inputs:
        if id(t) in collected:
            results.append(collected[id(t)][1])
        else:
            results.append(as_tensor(np.zeros(t.shape, dtype=t.dtype)))
    return results


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


@contextlib.contextmanager
def frozen(params: Iterable[Tensor]):
    """Temporarily stop tracking gradients for ``params``."""
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


from pgbn import ops as _ops  # noqa: E402  (circular: ops builds on Tensor)
