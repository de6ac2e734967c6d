"""Reverse-mode automatic differentiation over complex numpy arrays.

A :class:`CTensor` wraps an ndarray (real or complex) and, when any input
requires a gradient, records a backward closure.  Gradients of a real scalar
loss ``L`` are stored as a single array ``dL/dRe + 1j * dL/dIm`` for complex
tensors and as ``dL/dx`` for real tensors, so ``grad_re`` / ``grad_im`` give
the real pair directly.

With that convention a function ``z = f(w)`` pulls an upstream gradient
``G_z`` back as::

    G_w = conj(dz/dw) * G_z + (dz/dconj(w)) * conj(G_z)

which for holomorphic ``f`` reduces to ``conj(f'(w)) * G_z``.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CTensor",
    "tensor",
    "const",
    "backward",
    "zero_grad",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "conj",
    "abs2",
    "real",
    "imag",
    "exp",
    "exp_j",
    "reciprocal",
    "log",
    "sqrt",
    "power",
    "sigmoid_real",
    "relu_c",
    "leaky_relu_real",
    "maximum",
    "where",
    "sum",
    "mean",
    "concat",
    "reshape",
    "transpose",
    "norm2",
    "inv",
    "softmax",
]


def _is_complex(a: np.ndarray) -> bool:
    return np.iscomplexobj(a)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.kind in "biu":
        arr = arr.astype(np.float64)
    elif arr.dtype == np.float32:
        arr = arr.astype(np.float64)
    elif arr.dtype == np.complex64:
        arr = arr.astype(np.complex128)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class CTensor:
    """Array node in a define-by-run computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make ``ndarray <op> CTensor`` defer to us

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = op

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return _is_complex(self.data)

    @property
    def grad_re(self) -> np.ndarray:
        return np.zeros(self.shape) if self.grad is None else np.real(self.grad).copy()

    @property
    def grad_im(self) -> np.ndarray:
        return np.zeros(self.shape) if self.grad is None else np.imag(self.grad).copy()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "CTensor":
        return CTensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"CTensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.shape)
        if not self.is_complex:
            g = np.real(g)
        self.grad = g if self.grad is None else self.grad + g

    # -- operators -----------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def H(self) -> "CTensor":
        """Conjugate transpose of the last two axes."""
        return conj(swap_last(self))

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def real(self):
        return real(self)

    def imag(self):
        return imag(self)

    def conj(self):
        return conj(self)


def tensor(data, requires_grad: bool = False) -> CTensor:
    return CTensor(data, requires_grad=requires_grad)


def const(x) -> CTensor:
    return x if isinstance(x, CTensor) else CTensor(x)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording backward closures."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(data, parents: Sequence[CTensor], backward, op: str) -> CTensor:
    out = CTensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def _topo(root: CTensor) -> list[CTensor]:
    order: list[CTensor] = []
    seen: set[int] = set()
    stack: list[tuple[CTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: CTensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a real scalar ``loss``.

    Leaf gradients accumulate across calls; call :func:`zero_grad` between
    independent passes.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.is_complex:
        raise TypeError("backward needs a real-valued loss")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


def zero_grad(params: Iterable[CTensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> CTensor:
    a, b = const(a), const(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> CTensor:
    a, b = const(a), const(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def neg(a) -> CTensor:
    a = const(a)
    return _make(-a.data, (a,), lambda g: a._accumulate(-g), "neg")


def mul(a, b) -> CTensor:
    a, b = const(a), const(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * np.conj(b.data))
        if b.requires_grad:
            b._accumulate(g * np.conj(a.data))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> CTensor:
    a, b = const(a), const(b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by zero in CTensor")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * np.conj(1.0 / b.data))
        if b.requires_grad:
            b._accumulate(g * np.conj(-out / b.data))

    return _make(out, (a, b), bw, "div")


def reciprocal(a) -> CTensor:
    a = const(a)
    if np.any(a.data == 0):
        raise ZeroDivisionError("reciprocal of zero")
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: a._accumulate(g * np.conj(-out * out)), "reciprocal")


def conj(a) -> CTensor:
    a = const(a)
    return _make(np.conj(a.data), (a,), lambda g: a._accumulate(np.conj(g)), "conj")


def abs2(a) -> CTensor:
    """Squared modulus, real-valued."""
    a = const(a)
    out = np.real(a.data * np.conj(a.data))
    return _make(out, (a,), lambda g: a._accumulate(2.0 * np.real(g) * a.data), "abs2")


def real(a) -> CTensor:
    a = const(a)
    return _make(np.real(a.data).copy(), (a,), lambda g: a._accumulate(np.real(g)), "real")


def imag(a) -> CTensor:
    a = const(a)
    return _make(np.imag(a.data).copy(), (a,), lambda g: a._accumulate(1j * np.real(g)), "imag")


def exp(a) -> CTensor:
    a = const(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * np.conj(out)), "exp")


def exp_j(theta) -> CTensor:
    """``exp(1j * theta)`` for a real tensor ``theta``."""
    theta = const(theta)
    if theta.is_complex:
        raise TypeError("exp_j expects a real tensor")
    out = np.exp(1j * theta.data)
    return _make(out, (theta,), lambda g: theta._accumulate(np.real(np.conj(g) * 1j * out)), "exp_j")


def log(a) -> CTensor:
    a = const(a)
    if a.is_complex:
        raise TypeError("log is defined for real tensors only")
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data), "log")


def sqrt(a) -> CTensor:
    a = const(a)
    if a.is_complex:
        raise TypeError("sqrt is defined for real tensors only")
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        a._accumulate(g * d)

    return _make(out, (a,), bw, "sqrt")


def power(a, p: float) -> CTensor:
    """Real tensor raised to a constant real exponent (positive base)."""
    a = const(a)
    if a.is_complex:
        raise TypeError("power is defined for real tensors only")
    out = a.data**p
    return _make(out, (a,), lambda g: a._accumulate(g * p * a.data ** (p - 1.0)), "power")


def sigmoid_real(a) -> CTensor:
    a = const(a)
    if a.is_complex:
        raise TypeError("sigmoid_real expects a real tensor")
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)), "sigmoid")


def relu_c(a) -> CTensor:
    """ReLU applied to real and imaginary parts independently."""
    a = const(a)
    if not a.is_complex:
        mask = a.data > 0
        return _make(a.data * mask, (a,), lambda g: a._accumulate(g * mask), "relu")
    # interleaved (Re, Im) float view: one mask covers both parts
    x = np.ascontiguousarray(a.data, dtype=complex).view(np.float64)
    mask = x > 0
    out = (x * mask).view(complex)

    def bw(g):
        gf = np.ascontiguousarray(g, dtype=complex).view(np.float64)
        a._accumulate((gf * mask).view(complex))

    return _make(out, (a,), bw, "relu_c")


def leaky_relu_real(a, slope: float = 0.2) -> CTensor:
    a = const(a)
    if a.is_complex:
        raise TypeError("leaky_relu_real expects a real tensor")
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: a._accumulate(g * scale), "leaky_relu")


def maximum(a, floor: float) -> CTensor:
    """``max(a, floor)`` against a constant; the gradient follows ``a`` where it wins."""
    a = const(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: a._accumulate(g * mask), "maximum")


def where(cond, a, b) -> CTensor:
    """Select with a constant boolean mask; only the chosen branch receives gradient."""
    cond = np.asarray(cond, dtype=bool)
    a, b = const(a), const(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(np.where(cond, g, 0.0))
        if b.requires_grad:
            b._accumulate(np.where(cond, 0.0, g))

    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> CTensor:  # noqa: A001
    a = const(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: a._accumulate(_expand_reduced(g, a.shape, axis, keepdims)), "sum")


def mean(a, axis=None, keepdims: bool = False) -> CTensor:
    a = const(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1) if a.data.size else 1

    def bw(g):
        a._accumulate(_expand_reduced(g, a.shape, axis, keepdims) / count)

    return _make(out, (a,), bw, "mean")


def concat(tensors: Sequence, axis: int = -1) -> CTensor:
    ts = [const(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out, ts, bw, "concat")


def reshape(a, shape) -> CTensor:
    a = const(a)
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)), "reshape")


def transpose(a, axes=None) -> CTensor:
    a = const(a)
    inv_axes = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: a._accumulate(np.transpose(g, inv_axes)), "transpose")


def swap_last(a) -> CTensor:
    a = const(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: a._accumulate(np.swapaxes(g, -1, -2)), "swap")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _getitem(a: CTensor, idx) -> CTensor:
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(a.shape, dtype=np.result_type(g, a.data))
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(np.array(out, copy=True), (a,), bw, "getitem")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> CTensor:
    a, b = const(a), const(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    if a.ndim > 2 and b.ndim == 2:
        # stacked features times one weight: flatten to a single GEMM
        lead, n = a.shape[:-1], a.shape[-1]
        a2 = a.data.reshape(-1, n)

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accumulate((g2 @ np.conj(b.data).T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(np.conj(a2).T @ g2)

        return _make((a2 @ b.data).reshape(*lead, b.shape[-1]), (a, b), bw_flat, "matmul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ np.conj(np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b._accumulate(np.conj(np.swapaxes(a.data, -1, -2)) @ g)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def inv(a) -> CTensor:
    """Batched matrix inverse over the last two axes."""
    a = const(a)
    out = np.linalg.inv(a.data)

    def bw(g):
        ch = np.conj(np.swapaxes(out, -1, -2))
        a._accumulate(-(ch @ g @ ch))

    return _make(out, (a,), bw, "inv")


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def norm2(a, axis=-1, keepdims: bool = False) -> CTensor:
    """Euclidean norm along ``axis``."""
    return sqrt(sum(abs2(a), axis=axis, keepdims=keepdims))


def softmax(a, axis: int = -1) -> CTensor:
    a = const(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = exp(a - shift)
    return e / sum(e, axis=axis, keepdims=True)
