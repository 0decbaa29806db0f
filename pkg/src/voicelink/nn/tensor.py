"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the waveform-masking models need: elementwise
arithmetic with broadcasting, reductions, smooth nonlinearities and 1-D
(transposed) convolution backed by the kernels module.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ConsumedCacheError(RuntimeError):
    """backward() called twice on the same graph."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    def backward(self) -> None:
        """Reverse-mode sweep from this (scalar) tensor."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        if self._consumed:
            raise ConsumedCacheError("this graph was already backpropagated")
        topo, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    topo.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    stack.append((p, False))

        visit(self)
        if any(node._consumed for node in topo):
            raise ConsumedCacheError("graph contains already-backpropagated nodes")
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            node._consumed = True

    def _accum(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    # -- elementwise arithmetic ---------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))
        return Tensor._make(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accum(-g)
        return Tensor._make(-self.data, (self,), bw)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))
        return Tensor._make(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data ** 2, other.shape))
        return Tensor._make(self.data / other.data, (self, other), bw)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        def bw(g):
            self._accum(g * exponent * self.data ** (exponent - 1))
        return Tensor._make(self.data ** exponent, (self,), bw)

    # -- reductions and reshaping -------------------------------------------

    def sum(self):
        def bw(g):
            self._accum(np.broadcast_to(g, self.shape))
        return Tensor._make(self.data.sum(), (self,), bw)

    def mean(self):
        n = self.data.size
        def bw(g):
            self._accum(np.broadcast_to(g / n, self.shape))
        return Tensor._make(self.data.mean(), (self,), bw)

    def reshape(self, *shape):
        old = self.shape
        def bw(g):
            self._accum(g.reshape(old))
        return Tensor._make(self.data.reshape(*shape), (self,), bw)

    def slice(self, key):
        def bw(g):
            full = np.zeros_like(self.data)
            full[key] = g
            self._accum(full)
        return Tensor._make(self.data[key], (self,), bw)

    # -- nonlinearities -----------------------------------------------------

    def tanh(self):
        y = np.tanh(self.data)
        def bw(g):
            self._accum(g * (1 - y * y))
        return Tensor._make(y, (self,), bw)

    def softplus(self):
        y = np.logaddexp(0.0, self.data)
        def bw(g):
            self._accum(g / (1 + np.exp(-self.data)))
        return Tensor._make(y, (self,), bw)

    def log(self):
        def bw(g):
            self._accum(g / self.data)
        return Tensor._make(np.log(self.data), (self,), bw)

    def sqrt(self):
        y = np.sqrt(self.data)
        def bw(g):
            self._accum(g * 0.5 / y)
        return Tensor._make(y, (self,), bw)

    # -- convolution --------------------------------------------------------

    def conv1d(self, weight: "Tensor", bias: "Tensor | None" = None,
               stride: int = 1, padding: int = 0):
        """1-D convolution: self (Cin, T), weight (Cout, Cin, K) -> (Cout, T')."""
        x, w = self.data, weight.data
        y = kernels.conv1d_fwd(x, w, stride, padding)
        if bias is not None:
            y = y + bias.data[:, None]
        parents = (self, weight) if bias is None else (self, weight, bias)

        def bw(g):
            if self.requires_grad:
                self._accum(kernels.conv1d_bwd_x(g, w, stride, padding, x.shape[1]))
            if weight.requires_grad:
                weight._accum(kernels.conv1d_bwd_w(g, x, stride, padding, w.shape[2]))
            if bias is not None and bias.requires_grad:
                bias._accum(g.sum(axis=1))
        return Tensor._make(y, parents, bw)

    def conv1d_transpose(self, weight: "Tensor", stride: int = 1):
        """Transposed 1-D convolution (overlap-add synthesis).

        self (Cin, F), weight (Cin, Cout, K) -> (Cout, (F-1)*stride + K).
        Forward is the adjoint of conv1d, so the same kernels serve with the
        roles of forward and input-gradient swapped.
        """
        x, w = self.data, weight.data
        k = w.shape[2]
        t_out = (x.shape[1] - 1) * stride + k
        y = kernels.conv1d_bwd_x(x, w, stride, 0, t_out)

        def bw(g):
            if self.requires_grad:
                self._accum(kernels.conv1d_fwd(g, w, stride, 0))
            if weight.requires_grad:
                weight._accum(kernels.conv1d_bwd_w(x, g, stride, 0, k))
        return Tensor._make(y, (self, weight), bw)
