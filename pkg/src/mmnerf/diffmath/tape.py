"""Array-level reverse-mode differentiation.

Every differentiable op appends a node to a :class:`Tape` holding its inputs,
its output and a vector-Jacobian product closure.  :func:`backward` walks the
nodes in exact reverse order and accumulates parameter gradients into the
owning :class:`~mmnerf.diffmath.params.ParameterStore`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ContractError


class Tape:
    """Ordered record of differentiable ops."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    """A dense array that may be tracked on a tape.

    ``tape`` is None for constants.  Parameter leaves additionally carry the
    store and entry name their gradient flows into.
    """

    __slots__ = ("value", "tape", "param", "store")
    __array_priority__ = 100

    def __init__(self, value, tape: Tape | None = None, param: str | None = None, store=None):
        self.value = np.asarray(value)
        self.tape = tape
        self.param = param
        self.store = store

    @property
    def shape(self):
        return self.value.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def __repr__(self):
        kind = f"param={self.param!r}" if self.param else ("tracked" if self.tape else "const")
        return f"Tensor(shape={self.shape}, {kind})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def constant(x) -> Tensor:
    """Wrap ``x`` as an untracked tensor (gradients stop here)."""
    return Tensor(x.value if isinstance(x, Tensor) else np.asarray(x))


detach = constant


def _record(value, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs recorded on different tapes")
            tape = t.tape
    out = Tensor(value, tape)
    if tape is not None:
        tape.nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _operands(a, b):
    """Wrap both operands; bare Python numbers take the other side's float dtype."""
    if isinstance(a, (int, float)) and isinstance(b, Tensor) and b.value.dtype.kind == "f":
        a = np.asarray(a, dtype=b.value.dtype)
    elif isinstance(b, (int, float)) and isinstance(a, Tensor) and a.value.dtype.kind == "f":
        b = np.asarray(b, dtype=a.value.dtype)
    return as_tensor(a), as_tensor(b)


# --- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = _operands(a, b)
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _operands(a, b)
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _operands(a, b)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, a.shape) if a.tracked else None,
                              _unbroadcast(g * av, b.shape) if b.tracked else None))


def div(a, b):
    a, b = _operands(a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bv, a.shape) if a.tracked else None,
                              _unbroadcast(-g * out / bv, b.shape) if b.tracked else None))


def neg(a):
    a = as_tensor(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * av * g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,))


def sin(a):
    a = as_tensor(a)
    av = a.value
    return _record(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a):
    a = as_tensor(a)
    av = a.value
    return _record(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _record(a.value * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.value)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    av = a.value
    return _record(np.logaddexp(0.0, av).astype(av.dtype), (a,), lambda g: (g * expit(av),))


def identity(a):
    return as_tensor(a)


# --- linear algebra / shape -------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ContractError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return _record(av @ bv, (a, b),
                   lambda g: (g @ bv.T if a.tracked else None,
                              av.T @ g if b.tracked else None))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.value for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def index(a, key):
    a = as_tensor(a)
    shape, dtype = a.shape, a.value.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, key, g)
        return (full,)

    return _record(a.value[key], (a,), vjp)


def cumsum_exclusive(a, axis=-1):
    """Running sum that excludes the current element (first entry is 0)."""
    a = as_tensor(a)
    v = np.cumsum(a.value, axis=axis)
    out = np.zeros_like(v)
    n = v.shape[axis]
    np.moveaxis(out, axis, 0)[1:] = np.moveaxis(v, axis, 0)[: n - 1]

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g,)

    return _record(out, (a,), vjp)


def scatter_rows(idx, rows, n_rows):
    """Sum ``rows`` (M, C) into an (n_rows, C) array at row indices ``idx``.

    Reduction order is fixed, so the result is reproducible bit for bit.
    """
    out = np.empty((n_rows, rows.shape[1]), dtype=rows.dtype)
    for c in range(rows.shape[1]):
        out[:, c] = np.bincount(idx, weights=rows[:, c], minlength=n_rows)
    return out


def weighted_gather(table, idx, weights):
    """``out[p] = sum_k weights[p, k] * table[idx[p, k]]``.

    Differentiable with respect to ``table`` only; ``idx`` and ``weights`` are
    treated as constants.
    """
    table = as_tensor(table)
    tv = table.value
    idx = np.asarray(idx)
    w = np.asarray(weights, dtype=tv.dtype)
    if tv.ndim != 2 or idx.shape != w.shape or idx.ndim != 2:
        raise ContractError("weighted_gather expects table (V,C), idx and weights (P,K)")
    out = np.einsum("pkc,pk->pc", tv[idx], w)

    def vjp(g):
        rows = (w[:, :, None] * g[:, None, :]).reshape(-1, tv.shape[1])
        return (scatter_rows(idx.ravel(), rows, tv.shape[0]),)

    return _record(out, (table,), vjp)


# --- backward ---------------------------------------------------------------

def backward(tape: Tape, output_grad, output: Tensor | None = None) -> None:
    """Accumulate d(output . output_grad)/d(param) into every parameter store.

    ``output`` defaults to the result of the last op on the tape.  Gradients
    add onto whatever is already in the store; call ``zero_grads`` between
    steps.
    """
    if not tape.nodes and (output is None or output.param is None):
        raise ContractError("backward called without a recorded forward pass")
    if output is None:
        output = tape.nodes[-1].out
    g0 = np.asarray(output_grad, dtype=output.value.dtype)
    if g0.shape != output.shape:
        raise ContractError(f"output_grad shape {g0.shape} does not match output {output.shape}")
    if output.param is not None:
        output.store.grads[output.param] += g0
        return
    grads = {id(output): g0}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or inp.tape is None:
                continue
            if inp.param is not None:
                inp.store.grads[inp.param] += gi
            else:
                k = id(inp)
                prev = grads.get(k)
                grads[k] = gi if prev is None else prev + gi
