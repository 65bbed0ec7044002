"""Minimal reverse-mode automatic differentiation over numpy arrays.

Eager micrograd-style engine: every op computes its float64 value
immediately and records a closure that propagates the adjoint to its
parents.  Ops on tensors that do not require gradients fold to constants,
so constant subgraphs (frame embeddings, text tokens) cost nothing at
backward time.  Broadcasting follows numpy; adjoints of broadcast inputs
are summed back to the original shape.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers --------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(value, parents, backward) -> "Tensor":
        tracked = tuple(p for p in parents if p.requires_grad)
        if not tracked:
            return Tensor(value)
        return Tensor(value, requires_grad=True, parents=tracked, backward=backward)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out_value = self.value + other.value

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        return self._make(out_value, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accum(-g)
        return self._make(-self.value, (self,), backward)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out_value = self.value * other.value

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.value, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.value, other.shape))

        return self._make(out_value, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out_value = self.value / other.value

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.value, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.value / (other.value ** 2),
                                          other.shape))

        return self._make(out_value, (self, other), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __matmul__(self, other):
        other = self._lift(other)
        out_value = self.value @ other.value

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ other.value.swapaxes(-1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(self.value.swapaxes(-1, -2) @ g, other.shape))

        return self._make(out_value, (self, other), backward)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        old = self.shape

        def backward(g):
            self._accum(g.reshape(old))
        return self._make(self.value.reshape(*shape), (self,), backward)

    def swap_last(self):
        def backward(g):
            self._accum(g.swapaxes(-1, -2))
        return self._make(self.value.swapaxes(-1, -2), (self,), backward)

    # -- elementwise -------------------------------------------------------

    def exp(self):
        out_value = np.exp(self.value)

        def backward(g):
            self._accum(g * out_value)
        return self._make(out_value, (self,), backward)

    def log(self):
        def backward(g):
            self._accum(g / self.value)
        return self._make(np.log(self.value), (self,), backward)

    def sqrt(self):
        out_value = np.sqrt(self.value)

        def backward(g):
            self._accum(g / (2.0 * out_value))
        return self._make(out_value, (self,), backward)

    def tanh(self):
        out_value = np.tanh(self.value)

        def backward(g):
            self._accum(g * (1.0 - out_value ** 2))
        return self._make(out_value, (self,), backward)

    def relu(self):
        mask = self.value > 0

        def backward(g):
            self._accum(g * mask)
        return self._make(np.where(mask, self.value, 0.0), (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_value = self.value.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, shape).copy())
        return self._make(out_value, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def max(self, axis: int, keepdims: bool = False):
        out_value = self.value.max(axis=axis, keepdims=keepdims)
        expanded = out_value if keepdims else np.expand_dims(out_value, axis)
        mask = (self.value == expanded)
        share = mask / mask.sum(axis=axis, keepdims=True)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(g * share)
        return self._make(out_value, (self,), backward)

    def softmax(self, axis: int = -1):
        shifted = self.value - self.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_value = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_value).sum(axis=axis, keepdims=True)
            self._accum(out_value * (g - inner))
        return self._make(out_value, (self,), backward)

    def logsumexp(self, axis: int, keepdims: bool = False):
        m = self.value.max(axis=axis, keepdims=True)
        e = np.exp(self.value - m)
        s = e.sum(axis=axis, keepdims=True)
        out_value = m + np.log(s)
        soft = e / s
        if not keepdims:
            out_value = np.squeeze(out_value, axis)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(g * soft)
        return self._make(out_value, (self,), backward)

    # -- backward pass -------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Propagate adjoints from this tensor to every reachable parameter."""
        if not self.requires_grad:
            raise ValueError("output does not depend on any tracked tensor")
        if grad is None:
            if self.value.size != 1:
                raise ValueError("implicit seed only for scalar outputs")
            grad = np.ones_like(self.value)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis; adjoints are split back at the same offsets."""
    tensors = [Tensor._lift(t) for t in tensors]
    out_value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t._accum(g[tuple(index)])

    return Tensor._make(out_value, tuple(tensors), backward)


def stack_columns(columns: list[Tensor]) -> Tensor:
    """Stack (B,) vectors into a (B, C) matrix, one per column."""
    return concat([c.reshape(-1, 1) for c in columns], axis=1)
