"""Reverse-mode automatic differentiation over float64 numpy arrays.

Just enough tape machinery for the losses in this package: dense affine
layers, smooth activations, elementwise arithmetic, reductions, and the
logistic function. The graph is built implicitly: every operation returns a
new Tensor holding its inputs and a backward closure, and ``backward()`` on a
scalar output replays the recorded operations in reverse topological order.

Gradients only flow into tensors created with ``requires_grad=True``; all
other tensors are treated as constants, so the tape stays small.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError, ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that numpy broadcasting introduced."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def backward(self) -> None:
        """Backpropagate d(self)/d(leaf) from a scalar output."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.data.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.data.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Tensor":
        if not isinstance(exponent, int) or exponent < 1:
            raise ShapeError("only positive integer powers are supported")
        out = Tensor(self.data ** exponent, _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                self._accumulate(g * exponent * self.data ** (exponent - 1))
            out._backward = backward
        return out

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError("matmul supports 2-D operands only")
        out = Tensor(self.data @ other.data, _parents=(self, other))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if self.requires_grad:
                    self._accumulate(g @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ g)
            out._backward = backward
        return out

    # -- shape and reductions ------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def sum(self, axis: int | None = None) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis), _parents=(self,))
        if out.requires_grad:
            def backward(g: np.ndarray) -> None:
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.data.shape).copy())
                else:
                    self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    out = Tensor(s, _parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x._accumulate(g * s * (1.0 - s))
    return out


def silu(x: Tensor) -> Tensor:
    """Sigmoid-weighted linear unit, x * sigmoid(x); smooth everywhere."""
    s = expit(x.data)
    out = Tensor(x.data * s, _parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x._accumulate(g * s * (1.0 + x.data * (1.0 - s)))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, _parents=(x,))
    if out.requires_grad:
        out._backward = lambda g: x._accumulate(g * (1.0 - y * y))
    return out


def loss_gradient(loss: Tensor, params: Sequence[Tensor]) -> np.ndarray:
    """Gradient of a scalar loss with respect to `params`, flattened.

    Parameters not connected to the loss contribute exact zeros. The result
    is the row-major concatenation of each parameter's gradient, aligned with
    the order of `params`.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NonFiniteError(f"loss is not finite: {float(loss.data)}")
    for p in params:
        p.grad = None
    loss.backward()
    pieces = []
    for p in params:
        if p.grad is None:
            pieces.append(np.zeros(p.data.size))
        else:
            pieces.append(p.grad.ravel())
    return np.concatenate(pieces) if pieces else np.zeros(0)


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        lo = x.copy()
        hi = x.copy()
        lo[i] -= step
        hi[i] += step
        g[i] = (f(hi) - f(lo)) / (2.0 * step)
    return g


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Norm-relative discrepancy, guarded against a zero denominator."""
    denom = max(float(np.linalg.norm(exact)), 1e-300)
    return float(np.linalg.norm(approx - exact)) / denom
