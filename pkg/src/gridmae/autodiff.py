"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for a message-passing autoencoder and a trigonometric
physics penalty: elementwise arithmetic with broadcasting, matmul,
tanh/relu, sin/cos/sqrt, reductions, row gather/scatter, concatenation
and basic indexing. Everything is float64 and deterministic; graphs are
built eagerly and freed after ``backward``.

Gradients accumulate into ``Tensor.grad`` for every tensor created with
``requires_grad=True``; intermediate tensors receive gradients while the
backward pass runs but only leaves keep them.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    # -- plumbing ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Reverse-mode sweep seeding d(self)/d(self) = 1; self must be scalar."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _binary(a, b, out_data, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(grad), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(grad), b.data.shape))

    return Tensor(out_data(a, b), _parents=(a, b), _backward=backward)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda a, b: a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda a, b: a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a, b, lambda a, b: a.data * b.data,
        lambda g: g * b.data, lambda g: g * a.data,
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a, b, lambda a, b: a.data / b.data,
        lambda g: g / b.data, lambda g: -g * a.data / (b.data * b.data),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ grad)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def _unary(a, out_data, da) -> Tensor:
    a = as_tensor(a)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(da(grad))

    return Tensor(out_data(a.data), _parents=(a,), _backward=backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _unary(a, lambda d: out, lambda g: g * (1.0 - out * out))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, lambda d: np.maximum(d, 0.0), lambda g: g * (a.data > 0.0))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.sin, lambda g: g * np.cos(a.data))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.cos, lambda g: -g * np.sin(a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _unary(a, lambda d: out, lambda g: g * 0.5 / out)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.square, lambda g: g * 2.0 * a.data)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _unary(
        a,
        lambda d: np.power(d, exponent),
        lambda g: g * exponent * np.power(a.data, exponent - 1.0),
    )


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(grad):
        if not a.requires_grad:
            return
        g = grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(
        a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=backward
    )


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def take(a, idx) -> Tensor:
    """Basic/fancy indexing with scatter-add on the backward pass."""
    a = as_tensor(a)

    def backward(grad):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, grad)
            a._accumulate(full)

    return Tensor(a.data[idx], _parents=(a,), _backward=backward)


def scatter_add(src, index: np.ndarray, n_rows: int) -> Tensor:
    """out[i] = sum of src rows whose index equals i; src is (m, d)."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)

    def backward(grad):
        if src.requires_grad:
            src._accumulate(grad[index])

    data = np.zeros((n_rows,) + src.data.shape[1:], dtype=np.float64)
    np.add.at(data, index, src.data)
    return Tensor(data, _parents=(src,), _backward=backward)


def concat(parts, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                slicer = [slice(None)] * grad.ndim
                slicer[axis] = slice(start, stop)
                p._accumulate(grad[tuple(slicer)])

    return Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        _parents=tuple(parts),
        _backward=backward,
    )


def where_const(condition: np.ndarray, a, b) -> Tensor:
    """Select between two tensors with a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(cond, grad, 0.0), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(cond, 0.0, grad), b.data.shape))

    return Tensor(
        np.where(cond, a.data, b.data), _parents=(a, b), _backward=backward
    )
