"""Dense float64 tensors with reverse-mode automatic differentiation.

Numpy holds the data; every tracked operation records its parent tensors
and a gradient closure. ``backward`` on a scalar walks the graph once in
reverse topological order, accumulates ``.grad`` on every tracked tensor,
and consumes the graph: a second backward without a fresh forward raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Gradient-graph misuse (consumed graph reuse, missing gradients)."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher / eval forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d float64 array, optionally tracked by the gradient graph.

    Tensors with ``requires_grad`` (and everything computed from them
    while recording is enabled) participate in backward passes. After
    ``backward`` the traversed operation nodes are dead.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut loose from the gradient graph."""
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=True)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def flatten(self) -> "Tensor":
        return flatten(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _reduce(x: Tensor, axis, keepdims: bool, mean: bool) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims) if mean else x.data.sum(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def grad_fn(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        elif not keepdims and axis is None:
            gg = np.asarray(gg).reshape((1,) * x.data.ndim)
        gg = np.broadcast_to(gg, x.data.shape).astype(np.float64)
        if mean:
            gg = gg / count
        return (gg,)

    return _make(data, (x,), grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make(data, (x,), lambda g: (g.reshape(x.data.shape),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten expects a batch axis, got shape {x.data.shape}")
    return reshape(x, (x.data.shape[0], -1))


def _check_temperature(temperature: float) -> float:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return float(temperature)


def softmax(x: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise softmax over the last axis of ``x / temperature``.

    Max-subtraction keeps confident logits from overflowing.
    """
    t = _check_temperature(temperature)
    scaled = x.data / t
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return ((p * (g - inner)) / t,)

    return _make(p, (x,), grad_fn)


def log_softmax(x: Tensor, temperature: float = 1.0) -> Tensor:
    t = _check_temperature(temperature)
    scaled = x.data / t
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    logits = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(logits)

    def grad_fn(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / t,)

    return _make(logits, (x,), grad_fn)


def detach(x: Tensor) -> Tensor:
    return x.detach()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked tensor reachable from ``loss``.

    The loss must be a scalar; the traversed graph is single-use.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward pass")

    topo: list[Tensor] = []
    visiting: list[tuple[Tensor, bool]] = [(loss, False)]
    seen: set[int] = set()
    while visiting:
        node, expanded = visiting.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise GraphError("graph already consumed by a previous backward pass")
        visiting.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                visiting.append((parent, False))

    if loss.grad is None:
        loss.grad = np.zeros((), dtype=np.float64)
    loss.grad = loss.grad + 1.0

    for node in reversed(topo):
        if node._grad_fn is None:
            continue
        grads = node._grad_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
        node._consumed = True
        node._grad_fn = None

    # intermediate grads are not part of the contract; keep leaves only
    for node in topo:
        if node._parents and node is not loss:
            node.grad = None
