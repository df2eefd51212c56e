"""Reverse-mode automatic differentiation over numpy float64 arrays.

Every op records its parents and a closure that routes the output gradient
back to them; backward() walks the recorded graph in reverse topological
order. Broadcasting follows numpy semantics, with gradients summed back
over broadcast axes.
"""

from __future__ import annotations

import numpy as np


class GraphMissing(RuntimeError):
    """backward() called on a value with no recorded graph behind it."""


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def _make(self, data, parents, backward_fn) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, needs, parents if needs else (), backward_fn if needs else None)

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return  # constants take no gradient
        if self.grad is None:
            # Copy: the incoming array may be another node's grad buffer.
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return self._make(out_data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accumulate(-g)

        return self._make(-self.data, (self,), bw)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out_data = self.data * other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(out_data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out_data = self.data / other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data ** 2), other.shape)
                )

        return self._make(out_data, (self, other), bw)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def bw(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return self._make(out_data, (self,), bw)

    def __matmul__(self, other):
        other = self._lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ValueError("matmul operands must have at least 2 dimensions")
        out_data = self.data @ other.data

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape))

        return self._make(out_data, (self, other), bw)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bw(g):
            self._accumulate(g * out_data)

        return self._make(out_data, (self,), bw)

    def log(self):
        def bw(g):
            self._accumulate(g / self.data)

        return self._make(np.log(self.data), (self,), bw)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bw(g):
            self._accumulate(g * (1.0 - out_data ** 2))

        return self._make(out_data, (self,), bw)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bw(g):
            self._accumulate(g * 0.5 / out_data)

        return self._make(out_data, (self,), bw)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, self.shape).copy())

        return self._make(out_data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max_values(self, axis=None, keepdims: bool = False) -> np.ndarray:
        """Plain-array max, for softmax stabilization (treated as constant)."""
        return self.data.max(axis=axis, keepdims=keepdims)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def bw(g):
            self._accumulate(g.reshape(old))

        return self._make(self.data.reshape(shape), (self,), bw)

    def swapaxes(self, a: int, b: int):
        def bw(g):
            self._accumulate(g.swapaxes(a, b))

        return self._make(self.data.swapaxes(a, b), (self,), bw)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return self._make(out_data, (self,), bw)

    def gather_rows(self, indices: np.ndarray):
        """Row lookup W[indices] with scatter-add backward (embedding)."""
        idx = np.asarray(indices)
        out_data = self.data[idx]

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return self._make(out_data, (self,), bw)

    # -- engine ------------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate .grad on every tensor this value depends on."""
        if not self.requires_grad:
            raise GraphMissing("value does not depend on any differentiable input")
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)

        # Iterative topological order; training graphs can be deep.
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def fused_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax as a single graph node."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        s = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - s))

    needs = x.requires_grad
    return Tensor(out_data, needs, (x,) if needs else (), bw if needs else None)


def fused_log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bw(g):
        p = np.exp(out_data)
        x._accumulate(g - p * g.sum(axis=axis, keepdims=True))

    needs = x.requires_grad
    return Tensor(out_data, needs, (x,) if needs else (), bw if needs else None)


def mse_to(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target, fused into one node."""
    diff = pred.data - target
    out_data = np.array((diff * diff).mean())
    scale = 2.0 / diff.size

    def bw(g):
        pred._accumulate((g * scale) * diff)

    needs = pred.requires_grad
    return Tensor(out_data, needs, (pred,) if needs else (), bw if needs else None)


def layer_norm_op(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Last-axis layer normalization with analytic backward."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out_data = y * gamma.data + beta.data

    def bw(g):
        d = y.shape[-1]
        if gamma.requires_grad:
            gamma._accumulate((g * y).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gy = g * gamma.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * y).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gy - m1 - y * m2))

    parents = (x, gamma, beta)
    needs = any(p.requires_grad for p in parents)
    return Tensor(out_data, needs, parents if needs else (), bw if needs else None)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    """Concatenate along an axis; gradient splits back by segment."""
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]

    def bw(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            if t.requires_grad:
                t._accumulate(g[tuple(sl)])
            start += n

    needs = any(t.requires_grad for t in tensors)
    return Tensor(out_data, needs, tuple(tensors) if needs else (), bw if needs else None)
