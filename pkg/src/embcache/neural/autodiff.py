"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for recurrent nets with attention: a ``Tensor`` wraps a
float64 ndarray and remembers how it was produced; ``backward()`` walks the
tape in reverse topological order accumulating gradients.  Everything is kept
in float64 so central finite differences can verify gradients tightly.

Non-Tensor operands are treated as constants and receive no gradient.
"""
from __future__ import annotations

import numpy as np


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting: reduce grad back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_grad_fn")

    def __init__(self, value, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._grad_fn = grad_fn  # upstream grad -> tuple of parent contributions

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() expects a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _binary(a, b, out_value, da, db) -> Tensor:
    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))

    def grad_fn(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(_sum_to_shape(da(g), a.value.shape))
        if isinstance(b, Tensor):
            grads.append(_sum_to_shape(db(g), b.value.shape))
        return tuple(grads)

    return Tensor(out_value, parents, grad_fn)


def add(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    return _binary(a, b, av / bv, lambda g: g / bv, lambda g: -g * av / (bv * bv))


def matmul(a, b) -> Tensor:
    """a: (..., m, k) @ b: (k, n).  The right operand must be 2-D."""
    av, bv = _value(a), _value(b)
    if bv.ndim != 2:
        raise ValueError("matmul right operand must be 2-D")
    out = av @ bv

    def grad_fn(g):
        grads = []
        if isinstance(a, Tensor):
            grads.append(g @ bv.T)
        if isinstance(b, Tensor):
            grads.append(av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        return tuple(grads)

    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))
    return Tensor(out, parents, grad_fn)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    av = _value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return Tensor(out, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    av = _value(a)
    count = av.size if axis is None else av.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(_value(a))
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-_value(a)))
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(_value(a))
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    av = _value(a)
    return Tensor(np.log(av), (a,), lambda g: (g / av,))


def absolute(a: Tensor) -> Tensor:
    # subgradient at the kink is 0 (np.sign(0) == 0)
    av = _value(a)
    return Tensor(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was interior."""
    av = _value(a)
    mask = (av > lo) & (av < hi)
    return Tensor(np.clip(av, lo, hi), (a,), lambda g: (g * mask,))


def min_reduce(a: Tensor, axis: int) -> Tensor:
    """Min along one axis; the gradient flows to the first minimizer only."""
    av = _value(a)
    idx = np.argmin(av, axis=axis)  # argmin takes the first on ties
    out = np.take_along_axis(av, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def grad_fn(g):
        ga = np.zeros_like(av)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return Tensor(out, (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    av = _value(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor(out, (a,), grad_fn)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    values = [_value(t) for t in tensors]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, tuple(tensors), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    av = _value(a)
    return Tensor(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    av = _value(a)
    out = av[idx]
    fancy = any(isinstance(part, (np.ndarray, list)) for part in
                (idx if isinstance(idx, tuple) else (idx,)))

    def grad_fn(g):
        ga = np.zeros_like(av)
        if fancy:
            np.add.at(ga, idx, g)
        else:
            ga[idx] += g
        return (ga,)

    return Tensor(out, (a,), grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup (V, d) x integer ids (...,) -> (..., d)."""
    ids = np.asarray(ids)
    out = _value(table)[ids]

    def grad_fn(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(out, (table,), grad_fn)
