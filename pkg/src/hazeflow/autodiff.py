"""Minimal reverse-mode autodiff over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the upstream gradient back to them. ``backward()`` walks the
graph in reverse topological order. Image tensors use ``(B, C, H, W)`` layout.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        order, seen = [], set()
        stack = [(self, False)]
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
        self._accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    arr = np.array(data, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr, requires_grad=requires_grad, name=name)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _node(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), backward=backward if needs else None)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _node(x.data * x.data, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g * np.sign(x.data))

    return _node(np.abs(x.data), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    return _node(s, (x,), backward)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * s * (1.0 + x.data * (1.0 - s)))

    return _node(x.data * s, (x,), backward)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def getitem(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        x._accumulate(full)

    return _node(x.data[idx], (x,), backward)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(xs, axis=1) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x._accumulate(g[tuple(sl)])

    return _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution with zero padding; weight is ``(O, C, k, k)``, k odd."""
    b, c, h, w = x.shape
    o, c2, k, _ = weight.shape
    if c != c2:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {c2}")
    pad = k // 2
    if k == 1:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=x.data.dtype)
        xp[:, pad : pad + h, pad : pad + w] = x.data.transpose(0, 2, 3, 1)
        cols = np.empty((b, h, w, c, k * k), dtype=x.data.dtype)
        for i in range(k):
            for j in range(k):
                cols[..., i * k + j] = xp[:, i : i + h, j : j + w]
        cols = cols.reshape(-1, c * k * k)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, h, w, o).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if weight.requires_grad:
            weight._accumulate((gm.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gm.sum(axis=0))
        if x.requires_grad:
            gcols = gm @ wmat
            if k == 1:
                x._accumulate(gcols.reshape(b, h, w, c).transpose(0, 3, 1, 2))
            else:
                gcols = gcols.reshape(b, h, w, c, k, k)
                gx = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.data.dtype)
                for i in range(k):
                    for j in range(k):
                        gx[:, :, i : i + h, j : j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                x._accumulate(gx[:, :, pad : pad + h, pad : pad + w])

    return _node(np.ascontiguousarray(out), parents, backward)


def _window_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sum over every k x k window of the last two axes (valid, stride 1)."""
    c = np.cumsum(np.cumsum(a, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (a.ndim - 2) + [(1, 0), (1, 0)])
    return c[..., k:, k:] - c[..., :-k, k:] - c[..., k:, :-k] + c[..., :-k, :-k]


def _window_adjoint(m: np.ndarray, k: int) -> np.ndarray:
    """Scatter each window value back onto every pixel of its window."""
    pad = [(0, 0)] * (m.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)]
    return _window_sum(np.pad(m, pad), k)


def box_mean(x: Tensor, k: int) -> Tensor:
    """Mean over every k x k window of the last two axes (valid, stride 1)."""
    h, w = x.shape[-2:]
    if h < k or w < k:
        raise ValueError(f"box_mean: {h}x{w} input smaller than window {k}")

    def backward(g):
        x._accumulate(_window_adjoint(g, k) / (k * k))

    return _node(_window_sum(x.data, k) / (k * k), (x,), backward)


def ssim(x: Tensor, y: Tensor, k: int, c1: float, c2: float) -> Tensor:
    """Mean SSIM between single-channel ``(B, 1, H, W)`` tensors, uniform k x k windows.

    Fused op: the backward pass uses the closed-form derivative of the
    per-window SSIM with respect to the window statistics.
    """
    h, w = x.shape[-2:]
    if h < k or w < k:
        raise ValueError(f"ssim: {h}x{w} input smaller than window {k}")
    a, b = x.data, y.data
    n = k * k
    mx, my = _window_sum(a, k) / n, _window_sum(b, k) / n
    vx = _window_sum(a * a, k) / n - mx * mx
    vy = _window_sum(b * b, k) / n - my * my
    cov = _window_sum(a * b, k) / n - mx * my
    n1, n2 = 2 * mx * my + c1, 2 * cov + c2
    d1, d2 = mx * mx + my * my + c1, vx + vy + c2
    den = d1 * d2
    f = n1 * n2 / den
    count = f.size

    def backward(g):
        scale = g / (count * n)
        f_v = -f / d2
        f_cov = 2 * n1 / den
        if x.requires_grad:
            f_m = (2 * my * n2 - 2 * f * mx * d2) / den
            x._accumulate(
                scale
                * (
                    _window_adjoint(f_m - 2 * mx * f_v - my * f_cov, k)
                    + 2 * a * _window_adjoint(f_v, k)
                    + b * _window_adjoint(f_cov, k)
                )
            )
        if y.requires_grad:
            f_m = (2 * mx * n2 - 2 * f * my * d2) / den
            y._accumulate(
                scale
                * (
                    _window_adjoint(f_m - 2 * my * f_v - mx * f_cov, k)
                    + 2 * b * _window_adjoint(f_v, k)
                    + a * _window_adjoint(f_cov, k)
                )
            )

    return _node(np.asarray(f.mean(), dtype=a.dtype), (x, y), backward)
