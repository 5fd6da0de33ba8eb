"""Minimal reverse-mode autodiff over numpy arrays.

Only the handful of ops the deblurring network needs are provided.  Each op
builds a new :class:`Tensor` that remembers its parents and a closure that
pushes the output gradient back to them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..imagekernel import ParameterError
from .conv import conv2d_dilated_bwd, conv2d_dilated_fwd


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Backpropagate ``grad`` (default ones) to every tensor in the graph."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        # interior gradients are scratch; parameters keep accumulating
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)

    def bwd(g):
        a._accumulate(g)
        b._accumulate(g)

    return Tensor(a.data + b.data, parents=(a, b), backward=bwd)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)

    def bwd(g):
        a._accumulate(g)
        b._accumulate(-g)

    return Tensor(a.data - b.data, parents=(a, b), backward=bwd)


def mul(a, b) -> Tensor:
    """Elementwise product; shapes must match."""
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ParameterError(f"mul shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return Tensor(a.data * b.data, parents=(a, b), backward=bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * mask)

    return Tensor(np.where(mask, x.data, 0.0), parents=(x,), backward=bwd)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bwd(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, parents=(x,), backward=bwd)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    xs = [_t(x) for x in xs]
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def bwd(g):
        for x, part in zip(xs, np.split(g, splits, axis=1)):
            x._accumulate(part)

    return Tensor(np.concatenate([x.data for x in xs], axis=1), parents=xs, backward=bwd)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    dilation: int = 1,
    stride: int = 1,
    padding: int | None = None,
) -> Tensor:
    out, cache = conv2d_dilated_fwd(x.data, w.data, None if b is None else b.data, dilation, padding, stride)

    def bwd(g):
        need_x = x.requires_grad
        dx, dw, db = conv2d_dilated_bwd(g, cache)
        if need_x:
            x._accumulate(dx)
        w._accumulate(dw)
        if b is not None:
            b._accumulate(db)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents=parents, backward=bwd)


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    # half-pixel bilinear x2 with edge clamping
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(n):
        lo, hi = max(i - 1, 0), min(i + 1, n - 1)
        m[2 * i, i] += 0.75
        m[2 * i, lo] += 0.25
        m[2 * i + 1, i] += 0.75
        m[2 * i + 1, hi] += 0.25
    return m


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling of the two trailing axes."""
    uh = _upsample_matrix(x.shape[2], x.data.dtype)
    uw = _upsample_matrix(x.shape[3], x.data.dtype)
    out = np.einsum("ah,nchw,bw->ncab", uh, x.data, uw, optimize=True)

    def bwd(g):
        x._accumulate(np.einsum("ah,ncab,bw->nchw", uh, g, uw, optimize=True))

    return Tensor(out, parents=(x,), backward=bwd)


def avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ParameterError(f"avgpool2x needs even dims, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        x._accumulate(np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return Tensor(out, parents=(x,), backward=bwd)
