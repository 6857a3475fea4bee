"""Dense fp64 tensors with tape-based reverse-mode differentiation.

One ``Graph`` is recorded per forward pass and traversed exactly once, in
reverse append order, by :func:`backward`.  Shapes are static; the only
broadcasting supported is exact-match and scalar (size-1) operands, which
keeps every backward rule auditable by hand.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeMismatch",
    "tensor",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "sigmoid",
    "log",
    "arctan2_features",
    "concat",
    "concat_lastdim",
    "mean_axis",
    "sum_all",
    "softmax_lastdim",
    "log_softmax_lastdim",
    "reshape",
    "transpose",
    "index_axis",
    "pad2d",
    "crop2d",
    "backward",
    "gradcheck",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """A dense fp64 array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# --------------------------------------------------------------------------
# Tape


_ACTIVE: list["Graph"] = []


class Graph:
    """Append-only op tape.  Use as a context manager around a forward pass."""

    def __init__(self):
        # Each node: (output tensor, parent tensors, vjp).  The vjp maps the
        # upstream gradient to one gradient (or None) per parent.
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()


def _record(out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _ACTIVE:
        _ACTIVE[-1].nodes.append((out, tuple(parents), vjp))
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Gradients add across fan-out.  Traversal is strict reverse append order,
    so two runs on the same graph give bit-identical results.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, parents, vjp in reversed(graph.nodes):
        if out.grad is None:
            continue
        for parent, g in zip(parents, vjp(out.grad)):
            if g is None:
                continue
            # Rebinding (never in-place mutation) keeps aliased views safe.
            parent.grad = g if parent.grad is None else parent.grad + g


# --------------------------------------------------------------------------
# Ops


def _scalar_ok(a: Tensor, b: Tensor) -> bool:
    return a.size == 1 or b.size == 1


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum an upstream gradient down to a size-1 operand's shape."""
    return np.sum(g).reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  2D x 2D, batched x batched (equal leading dims), or
    batched x 2D (shared right operand)."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims differ: {ad.shape} vs {bd.shape}")
    out = Tensor(np.matmul(ad, bd))

    def vjp(g: np.ndarray):
        if bd.ndim == 2 and ad.ndim > 2:
            ga = np.matmul(g, bd.T)
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _record(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _scalar_ok(a, b):
        raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} do not match")
    out = Tensor(a.data + b.data)

    def vjp(g: np.ndarray):
        ga = _reduce_to(g, a.shape) if a.shape != g.shape else g
        gb = _reduce_to(g, b.shape) if b.shape != g.shape else g
        return ga, gb

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not _scalar_ok(a, b):
        raise ShapeMismatch(f"mul: shapes {a.shape} and {b.shape} do not match")
    out = Tensor(a.data * b.data)

    def vjp(g: np.ndarray):
        ga = g * b.data
        gb = g * a.data
        if a.shape != out.shape:
            ga = _reduce_to(ga, a.shape)
        if b.shape != out.shape:
            gb = _reduce_to(gb, b.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def arctan2_features(y: Tensor, x: Tensor) -> Tensor:
    """Elementwise two-argument arctangent, atan2(y, x)."""
    if y.shape != x.shape:
        raise ShapeMismatch(f"arctan2_features: shapes {y.shape} and {x.shape} differ")
    out = Tensor(np.arctan2(y.data, x.data))
    denom = y.data ** 2 + x.data ** 2

    def vjp(g: np.ndarray):
        safe = np.where(denom == 0.0, 1.0, denom)
        gy = np.where(denom == 0.0, 0.0, g * x.data / safe)
        gx = np.where(denom == 0.0, 0.0, g * -y.data / safe)
        return gy, gx

    return _record(out, (y, x), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    base = list(datas[0].shape)
    ax = axis % len(base)
    for d in datas[1:]:
        other = list(d.shape)
        if len(other) != len(base) or any(
            i != ax and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatch(
                f"concat: shapes {[d.shape for d in datas]} differ off axis {axis}"
            )
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: np.ndarray):
        idx = [slice(None)] * g.ndim
        pieces = []
        for k in range(len(datas)):
            idx[ax] = slice(int(offsets[k]), int(offsets[k + 1]))
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _record(out, tuple(tensors), vjp)


def concat_lastdim(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=-1)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    out = Tensor(np.mean(a.data, axis=axis))

    def vjp(g: np.ndarray):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Numerically-stable softmax over the last axis.

    ``mask`` is a boolean array of the same shape; masked positions output
    exactly 0 and receive no attention mass.  A fully-masked row is an error.
    """
    xd = x.data
    if mask is None:
        m = np.ones(xd.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != xd.shape:
            raise ShapeMismatch(
                f"softmax mask shape {m.shape} does not match input {xd.shape}"
            )
    counts = m.sum(axis=-1)
    if np.any(counts == 0):
        bad = tuple(int(i) for i in np.argwhere(counts == 0)[0])
        raise ValueError(f"softmax: fully masked row at index {bad}")
    neg = np.where(m, xd, -np.inf)
    mx = np.max(neg, axis=-1, keepdims=True)
    e = np.where(m, np.exp(xd - mx), 0.0)
    y = e / np.sum(e, axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g: np.ndarray):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), vjp)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    """log(softmax(x)) over the last axis, stable for saturated logits."""
    xd = x.data
    mx = np.max(xd, axis=-1, keepdims=True)
    shifted = xd - mx
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = Tensor(shifted - lse)
    y = np.exp(out.data)

    def vjp(g: np.ndarray):
        return (g - y * np.sum(g, axis=-1, keepdims=True),)

    return _record(out, (x,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def index_axis(a: Tensor, axis: int, i: int) -> Tensor:
    """Select index ``i`` along ``axis`` (drops the axis)."""
    out = Tensor(np.take(a.data, i, axis=axis))

    def vjp(g: np.ndarray):
        full = np.zeros(a.shape)
        idx = [slice(None)] * a.ndim
        idx[axis] = i
        full[tuple(idx)] = g
        return (full,)

    return _record(out, (a,), vjp)


def pad2d(a: Tensor, target: int) -> Tensor:
    """Zero-pad the first two axes of an [n, n, ...] tensor up to [target, target, ...]."""
    n = a.shape[0]
    if a.shape[1] != n or target < n:
        raise ShapeMismatch(f"pad2d: cannot pad shape {a.shape} to side {target}")
    if target == n:
        return _record(Tensor(a.data.copy()), (a,), lambda g: (g,))
    widths = [(0, target - n), (0, target - n)] + [(0, 0)] * (a.ndim - 2)
    out = Tensor(np.pad(a.data, widths))
    return _record(out, (a,), lambda g: (g[:n, :n].copy(),))


def crop2d(a: Tensor, n: int) -> Tensor:
    """Take the leading [n, n] block of the first two axes."""
    if n > a.shape[0] or n > a.shape[1]:
        raise ShapeMismatch(f"crop2d: cannot crop shape {a.shape} to side {n}")
    out = Tensor(a.data[:n, :n].copy())

    def vjp(g: np.ndarray):
        full = np.zeros(a.shape)
        full[:n, :n] = g
        return (full,)

    return _record(out, (a,), vjp)


# --------------------------------------------------------------------------
# Gradient checking


def gradcheck(f, inputs: Sequence[Tensor], h: float = 1e-5):
    """Compare analytic gradients of ``f(inputs)`` against central differences.

    Returns ``(max_rel_err, worst)`` where ``worst`` identifies the offending
    coordinate as ``(input_index, flat_coordinate, analytic, numeric)``.
    Raises if ``f`` is detected to be non-deterministic by double evaluation.
    """
    first = f(inputs).data.copy()
    second = f(inputs).data.copy()
    if not np.array_equal(first, second):
        raise ValueError("gradcheck: f is non-deterministic (double evaluation mismatch)")

    for t in inputs:
        t.zero_grad()
    with Graph() as g:
        out = f(inputs)
    backward(g, out)

    max_err = 0.0
    worst = (None, None, 0.0, 0.0)
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = f(inputs).item()
            flat[j] = orig - h
            minus = f(inputs).item()
            flat[j] = orig
            numeric = (plus - minus) / (2.0 * h)
            a = aflat[j]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if err > max_err:
                max_err = err
                worst = (i, j, float(a), float(numeric))
    return max_err, worst
