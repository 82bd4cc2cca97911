"""Minimal tape-based reverse-mode autodiff over dense 2-D float arrays.

Everything is a 2-D matrix; scalars are 1x1. Values are float64 and treated
as immutable once created (updates replace the array, never mutate it).
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "DomainError",
    "ContractError",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "relu",
    "sigmoid",
    "square",
    "log",
    "clip",
    "reduce_sum",
    "reduce_mean",
    "constant",
    "detach",
    "backward",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


# Test hook: when True, the tanh adjoint is deliberately wrong so that
# gradient checks must fail (negative control for the gradcheck command).
CORRUPT_TANH_ADJOINT = False

# When set to a list, relu/clip append their boolean masks. Finite-difference
# checks use this to skip evaluation points that straddle a kink.
_mask_capture = None


@contextmanager
def record_kink_masks(dest):
    global _mask_capture
    _mask_capture = dest
    try:
        yield dest
    finally:
        _mask_capture = None


class Tensor:
    """A 2-D float64 matrix node. Leaf tensors carry parameters or data."""

    __slots__ = ("value", "name")

    def __init__(self, value, name=None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"tensor must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.size != 1:
            raise ContractError(f"item() on non-scalar of shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


class Tape:
    """Ordered record of primitive ops; reverse replay yields gradients."""

    def __init__(self):
        self._records = []

    def record(self, inputs, output, backward_fn):
        self._records.append((inputs, output, backward_fn))

    def __len__(self):
        return len(self._records)


class Gradients:
    """Gradient lookup keyed by tensor identity; off-tape tensors get zeros."""

    def __init__(self, table):
        self._table = table

    def get(self, tensor):
        g = self._table.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.value)
        return g


def backward(loss, tape):
    """Accumulate adjoints in reverse record order from a scalar loss."""
    if loss.value.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    table = {id(loss): np.ones_like(loss.value)}
    for inputs, output, backward_fn in reversed(tape._records):
        g_out = table.get(id(output))
        if g_out is None:
            continue
        for tensor, g_in in zip(inputs, backward_fn(g_out)):
            prev = table.get(id(tensor))
            table[id(tensor)] = g_in if prev is None else prev + g_in
    return Gradients(table)


def constant(value, name=None):
    return Tensor(value, name=name)


def detach(t):
    """A fresh leaf sharing the value; gradients stop here."""
    return Tensor(t.value, name=t.name)


def matmul(tape, a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.value @ b.value)

    def bwd(g):
        return g @ b.value.T, a.value.T @ g

    tape.record((a, b), out, bwd)
    return out


def _binary_shapes(a, b, op):
    # exact match, or b broadcast as a single row
    if a.shape == b.shape:
        return False
    if b.shape == (1, a.shape[1]):
        return True
    raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(tape, a, b):
    row_bcast = _binary_shapes(a, b, "add")
    out = Tensor(a.value + b.value)

    def bwd(g):
        gb = g.sum(axis=0, keepdims=True) if row_bcast else g
        return g, gb

    tape.record((a, b), out, bwd)
    return out


def sub(tape, a, b):
    row_bcast = _binary_shapes(a, b, "sub")
    out = Tensor(a.value - b.value)

    def bwd(g):
        gb = g.sum(axis=0, keepdims=True) if row_bcast else g
        return g, -gb

    tape.record((a, b), out, bwd)
    return out


def mul(tape, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.value * b.value)

    def bwd(g):
        return g * b.value, g * a.value

    tape.record((a, b), out, bwd)
    return out


def scale(tape, a, c):
    c = float(c)
    out = Tensor(a.value * c)
    tape.record((a,), out, lambda g: (g * c,))
    return out


def tanh(tape, a):
    y = np.tanh(a.value)
    out = Tensor(y)

    def bwd(g):
        d = g * (1.0 - y * y)
        if CORRUPT_TANH_ADJOINT:
            d = d * 1.01
        return (d,)

    tape.record((a,), out, bwd)
    return out


def relu(tape, a):
    out = Tensor(np.maximum(a.value, 0.0))
    mask = a.value > 0.0
    if _mask_capture is not None:
        _mask_capture.append(mask)
    tape.record((a,), out, lambda g: (g * mask,))
    return out


def sigmoid(tape, a):
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Tensor(y)
    tape.record((a,), out, lambda g: (g * y * (1.0 - y),))
    return out


def square(tape, a):
    out = Tensor(a.value * a.value)
    tape.record((a,), out, lambda g: (g * 2.0 * a.value,))
    return out


def log(tape, a):
    bad = a.value <= 0.0
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DomainError(f"log of non-positive entry {a.value[r, c]} at ({r}, {c})")
    out = Tensor(np.log(a.value))
    tape.record((a,), out, lambda g: (g / a.value,))
    return out


def clip(tape, a, lo, hi):
    out = Tensor(np.clip(a.value, lo, hi))
    mask = (a.value > lo) & (a.value < hi)
    if _mask_capture is not None:
        _mask_capture.append(mask)
    tape.record((a,), out, lambda g: (g * mask,))
    return out


def reduce_sum(tape, a):
    out = Tensor(a.value.sum(dtype=np.float64))
    tape.record((a,), out, lambda g: (np.full_like(a.value, g[0, 0]),))
    return out


def reduce_mean(tape, a):
    n = a.value.size
    out = Tensor(a.value.sum(dtype=np.float64) / n)
    tape.record((a,), out, lambda g: (np.full_like(a.value, g[0, 0] / n),))
    return out
