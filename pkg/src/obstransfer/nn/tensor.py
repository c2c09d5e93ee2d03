"""Tape-based reverse-mode autodiff over numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the graph in reverse topological order. Shapes are never broadcast
implicitly; the few ops that combine different shapes (bias add, scalar
scaling) say so in their name.
"""
from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


class GraphError(RuntimeError):
    """Raised for misuse of the computation graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def backward(self) -> None:
        backward(self)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Forward passes inside this block record no graph."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _node(data: np.ndarray, parents: tuple, fn: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError("non-finite value in forward output")
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=fn)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward()")
    if not loss.requires_grad:
        loss._consumed = True
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise GraphError("graph already consumed by a previous backward()")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            # leaf parameter
            if g is None:
                g = np.zeros_like(node.data)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            g = np.zeros_like(node.data)
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._parents:
            node._backward = None
            node._parents = ()
            node._consumed = True
    loss._consumed = True


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., k] + b[k]`` with ``b`` broadcast over every leading axis."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """NCHW tensor plus a per-channel bias."""
    if x.data.ndim != 4 or b.shape != (x.shape[1],):
        raise ValueError(f"add_channel_bias: bias {b.shape} vs input {x.shape}")
    return _node(x.data + b.data[None, :, None, None], (x, b),
                 lambda g: (g, g.sum(axis=(0, 2, 3))))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def stop_gradient(a: Tensor) -> Tensor:
    """Same values, no path back to ``a``."""
    return Tensor(a.data.copy())


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _node(np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def sum_rows(a: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor -> shape (N,)."""
    if a.data.ndim != 2:
        raise ValueError("sum_rows expects a 2-D tensor")
    k = a.shape[1]
    return _node(a.data.sum(axis=1), (a,), lambda g: (np.repeat(g[:, None], k, axis=1),))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(old),))


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """``table[index]`` along axis 0; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ValueError("gather_rows expects a 1-D index")
    if len(index) and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError("gather_rows: index out of range")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(table.data[index], (table,), bw)


def pick(a: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise selection ``a[i, index[i]]`` of a 2-D tensor -> (N,)."""
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise ValueError(f"pick: need (N,K) input and (N,) index, got {a.shape}, {index.shape}")
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _node(a.data[rows, index], (a,), bw)


def batched_matvec(m: Tensor, v: Tensor) -> Tensor:
    """``out[i] = m[i] @ v[i]`` for m of shape (N,d,d) and v of shape (N,d)."""
    if m.data.ndim != 3 or v.data.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise ValueError(f"batched_matvec: shapes {m.shape} and {v.shape}")
    md, vd = m.data, v.data
    return _node(np.einsum("nij,nj->ni", md, vd), (m, v),
                 lambda g: (g[:, :, None] * vd[:, None, :], np.einsum("nij,ni->nj", md, g)))


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """``out[i] = <a[i], b[i]>`` -> (N,)."""
    _same_shape(a, b, "rowwise_dot")
    ad, bd = a.data, b.data
    return _node((ad * bd).sum(axis=1), (a, b),
                 lambda g: (g[:, None] * bd, g[:, None] * ad))


# ---------------------------------------------------------------- normalisation / losses

class ZeroNormError(FloatingPointError):
    """unit_normalize met a row with zero Euclidean norm."""


def unit_normalize(z: Tensor) -> Tensor:
    if z.data.ndim != 2:
        raise ValueError("unit_normalize expects a batch of row vectors")
    norms = np.sqrt((z.data * z.data).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise ZeroNormError("unit_normalize: zero-norm row")
    y = z.data / norms

    def bw(g):
        # d(z/|z|) = (g - y <y, g>) / |z|
        return ((g - y * (y * g).sum(axis=1, keepdims=True)) / norms,)

    return _node(y, (z,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of ``(a - b)**2``."""
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        d = (2.0 * float(g) / n) * diff
        return (d, -d)

    return _node(np.asarray((diff * diff).mean()), (a, b), bw)


def mean_sq_row_norm(a: Tensor, b: Tensor) -> Tensor:
    """``(1/N) sum_i ||a_i - b_i||^2`` for (N, d) inputs."""
    _same_shape(a, b, "mean_sq_row_norm")
    diff = a.data - b.data
    n = diff.shape[0]

    def bw(g):
        d = (2.0 * float(g) / n) * diff
        return (d, -d)

    return _node(np.asarray((diff * diff).sum() / n), (a, b), bw)


# ---------------------------------------------------------------- convolution

@lru_cache(maxsize=64)
def _im2col_index(c: int, h: int, w: int, k: int, stride: int) -> np.ndarray:
    """Flat C*H*W source index of every (output pixel, (c, i, j)) patch entry."""
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(k), np.arange(k), indexing="ij")
    oy, ox = np.meshgrid(np.arange(ho) * stride, np.arange(wo) * stride, indexing="ij")
    rows = (oy.reshape(-1, 1) + ki.reshape(1, -1))
    cols = (ox.reshape(-1, 1) + kj.reshape(1, -1))
    return (ci.reshape(1, -1) * h * w + rows * w + cols).astype(np.intp)


@lru_cache(maxsize=64)
def _col2im_target(n: int, c: int, h: int, w: int, k: int, stride: int) -> np.ndarray:
    """Flat N*C*H*W destination of every im2col entry of an N-image batch."""
    idx = _im2col_index(c, h, w, k, stride)
    return (np.arange(n)[:, None, None] * (c * h * w) + idx[None]).ravel()


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D cross-correlation. x: (N,C,H,W), w: (O,C,k,k)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OCkk weights")
    n, c, h, wd = x.shape
    o, cw, k, k2 = w.shape
    if c != cw or k != k2:
        raise ValueError(f"conv2d: input channels {c} vs weight {w.shape}")
    if h < k or wd < k:
        raise ValueError(f"conv2d: kernel {k} larger than input {h}x{wd}")
    xd = x.data
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    idx = _im2col_index(c, h, wd, k, stride)
    chw = c * h * wd
    # np.take keeps the result C-ordered; x[:, idx] would not, and the
    # reshape below would then copy
    cols = np.take(xd.reshape(n, chw), idx, axis=1).reshape(n * ho * wo, c * k * k)
    w2 = w.data.reshape(o, c * k * k)
    out = (cols @ w2.T).reshape(n, ho, wo, o)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(o, c, k, k)
        if not x.requires_grad:
            return None, gw
        dcols = g2 @ w2
        gx = np.bincount(_col2im_target(n, c, h, wd, k, stride), weights=dcols.ravel(),
                         minlength=n * chw)
        return gx.reshape(xd.shape), gw

    return _node(out, (x, w), bw)
