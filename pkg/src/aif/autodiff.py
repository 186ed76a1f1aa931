"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records one forward pass; ``Tape.backward`` replays it in reverse
to accumulate adjoints. Values are held in ``Var`` wrappers. Every op below
accepts a mix of ``Var`` and plain array/scalar operands; if no operand is a
``Var`` the op short-circuits to plain numpy, so formula code written against
these ops works unchanged on raw arrays (no tape, no overhead worth noting).

All math is float64. Recording order is execution order, which is a valid
topological order of the graph, so backward is a single reversed sweep.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class Tape:
    """Recorded backward closures for one forward pass. One backward() only."""

    __slots__ = ("_nodes", "_used")

    def __init__(self):
        self._nodes = []
        self._used = False

    def record(self, fn):
        self._nodes.append(fn)

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: "Var", adjoint: float = 1.0):
        """Accumulate d(loss)/d(v) into v.grad for every Var on this tape."""
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if self._used:
            raise ContractError("tape has already been backpropagated")
        self._used = True
        loss._add_grad(np.asarray(adjoint, dtype=np.float64))
        for fn in reversed(self._nodes):
            fn()


class Var:
    """A float64 array with an adjoint slot. Leaf parameters have tape=None."""

    # Force numpy to defer binary ops to Var's reflected operators.
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape: Tape | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Var({self.value!r})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def value_of(x):
    """Raw float64 array behind x, whether Var or array-like."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ContractError("operands were recorded on different tapes")
    return tape


def _any_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (undo numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, out_value, da, db):
    """Build a Var for a binary op; da/db map the output adjoint to operands."""
    out = Var(out_value, _tape_of(a, b))
    if out.tape is not None:

        def bw():
            g = out.grad
            if g is None:
                return
            if isinstance(a, Var):
                a._add_grad(_unbroadcast(da(g), a.value.shape))
            if isinstance(b, Var):
                b._add_grad(_unbroadcast(db(g), b.value.shape))

        out.tape.record(bw)
    return out


def add(a, b):
    if not _any_var(a, b):
        return np.add(value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def sub(a, b):
    if not _any_var(a, b):
        return np.subtract(value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g)


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b):
    if not _any_var(a, b):
        return np.divide(value_of(a), value_of(b))
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av / bv, lambda g: g / bv, lambda g: -g * av / (bv * bv))


def matmul(a, b):
    """Matrix product for 1-D/2-D operands (numpy matmul semantics)."""
    av, bv = value_of(a), value_of(b)
    if not _any_var(a, b):
        return np.matmul(av, bv)
    out_value = np.matmul(av, bv)

    if av.ndim == 2 and bv.ndim == 2:
        da = lambda g: np.matmul(g, bv.T)
        db = lambda g: np.matmul(av.T, g)
    elif av.ndim == 1 and bv.ndim == 2:
        da = lambda g: np.matmul(bv, g)
        db = lambda g: np.outer(av, g)
    elif av.ndim == 2 and bv.ndim == 1:
        da = lambda g: np.outer(g, bv)
        db = lambda g: np.matmul(av.T, g)
    else:  # 1-D @ 1-D inner product
        da = lambda g: g * bv
        db = lambda g: g * av

    out = Var(out_value, _tape_of(a, b))
    if out.tape is not None:

        def bw():
            g = out.grad
            if g is None:
                return
            if isinstance(a, Var):
                a._add_grad(da(g))
            if isinstance(b, Var):
                b._add_grad(db(g))

        out.tape.record(bw)
    return out


def _unary(a, out_value, da):
    out = Var(out_value, _tape_of(a))
    if out.tape is not None:

        def bw():
            g = out.grad
            if g is None:
                return
            a._add_grad(da(g))

        out.tape.record(bw)
    return out


def tanh(a):
    if not _any_var(a):
        return np.tanh(value_of(a))
    y = np.tanh(a.value)
    return _unary(a, y, lambda g: g * (1.0 - y * y))


def exp(a):
    if not _any_var(a):
        return np.exp(value_of(a))
    y = np.exp(a.value)
    return _unary(a, y, lambda g: g * y)


def log(a):
    if not _any_var(a):
        return np.log(value_of(a))
    av = a.value
    return _unary(a, np.log(av), lambda g: g / av)


def sqrt(a):
    if not _any_var(a):
        return np.sqrt(value_of(a))
    y = np.sqrt(a.value)
    return _unary(a, y, lambda g: g / (2.0 * y))


def square(a):
    if not _any_var(a):
        v = value_of(a)
        return v * v
    av = a.value
    return _unary(a, av * av, lambda g: g * (2.0 * av))


def _sigmoid(x):
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    """log(1 + exp(a)), computed without overflow."""
    if not _any_var(a):
        return np.logaddexp(0.0, value_of(a))
    av = a.value
    return _unary(a, np.logaddexp(0.0, av), lambda g: g * _sigmoid(av))


def maximum(a, floor: float):
    """Elementwise max with a scalar; gradient flows where a > floor."""
    if not _any_var(a):
        return np.maximum(value_of(a), floor)
    av = a.value
    mask = av > floor
    return _unary(a, np.maximum(av, floor), lambda g: g * mask)


def vsum(a, axis=None):
    """Sum over all elements (axis=None) or over one axis."""
    if not _any_var(a):
        return np.sum(value_of(a), axis=axis)
    av = a.value
    out_value = np.sum(av, axis=axis)
    if axis is None:
        da = lambda g: g * np.ones_like(av)
    else:
        da = lambda g: np.broadcast_to(np.expand_dims(g, axis), av.shape).copy()
    return _unary(a, out_value, da)


def vmean(a):
    if not _any_var(a):
        return np.mean(value_of(a))
    n = a.value.size
    return _unary(a, np.mean(a.value), lambda g: (g / n) * np.ones_like(a.value))


def concat(parts, axis=-1):
    """Concatenate along an axis, splitting the adjoint back out."""
    if not _any_var(*parts):
        return np.concatenate([value_of(p) for p in parts], axis=axis)
    values = [value_of(p) for p in parts]
    out_value = np.concatenate(values, axis=axis)
    out = Var(out_value, _tape_of(*parts))
    if out.tape is not None:
        sizes = [v.shape[axis] for v in values]
        offsets = np.cumsum([0] + sizes)

        def bw():
            g = out.grad
            if g is None:
                return
            moved = np.moveaxis(g, axis, 0)
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if isinstance(part, Var):
                    part._add_grad(np.moveaxis(moved[lo:hi], 0, axis))

        out.tape.record(bw)
    return out
