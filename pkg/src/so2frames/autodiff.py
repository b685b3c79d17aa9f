"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every differentiable operation in this package is built from the
primitives below.  A :class:`Var` records its parents and a closure
computing the vector-Jacobian product; :func:`backward` replays the tape
in reverse topological order.  There is deliberately no broadcasting
magic beyond what the primitives need and no higher-order gradients.

All primitives dispatch: if none of the arguments is a :class:`Var` the
plain numpy result is returned, so the same forward code serves both the
inference path (ndarrays) and the training path (Vars).
"""

from __future__ import annotations

import math

import numpy as np


class Var:
    """A node in the reverse-mode tape wrapping a float64 ndarray."""

    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # operator sugar; mixed Var/ndarray operands are fine
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x) -> np.ndarray:
    return x.value if is_var(x) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, parents, vjp):
    """Create a Var if any parent is a Var, else return the raw value."""
    if any(is_var(p) for p in parents):
        return Var(value, tuple(parents), vjp)
    return value


def backward(out: Var, seed=None) -> None:
    """Accumulate gradients of ``out`` into ``.grad`` of every ancestor.

    ``seed`` defaults to ones (use a scalar output for a plain gradient).
    Existing ``.grad`` fields in the subgraph are reset first.
    """
    if not is_var(out):
        raise TypeError("backward needs a Var output")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if is_var(parent) and id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not is_var(parent):
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b):
    va, vb = value_of(a), value_of(b)
    out = va + vb

    def vjp(g):
        return _unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)

    return _node(out, (a, b), vjp)


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    out = va - vb

    def vjp(g):
        return _unbroadcast(g, va.shape), -_unbroadcast(g, vb.shape)

    return _node(out, (a, b), vjp)


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va * vb

    def vjp(g):
        return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)

    return _node(out, (a, b), vjp)


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb

    def vjp(g):
        return (_unbroadcast(g / vb, va.shape),
                _unbroadcast(-g * va / (vb * vb), vb.shape))

    return _node(out, (a, b), vjp)


def matmul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va @ vb

    def vjp(g):
        if va.ndim == 1 and vb.ndim == 1:
            return g * vb, g * va
        if vb.ndim == 1:
            return np.outer(g, vb), np.swapaxes(va, -1, -2) @ g
        if va.ndim == 1:
            return vb @ g, np.outer(va, g)
        ga = g @ np.swapaxes(vb, -1, -2)
        gb = np.swapaxes(va, -1, -2) @ g
        return _unbroadcast(ga, va.shape), _unbroadcast(gb, vb.shape)

    return _node(out, (a, b), vjp)


def einsum(subscripts: str, *operands):
    """Differentiable einsum for pure contractions.

    Every index of a differentiated operand must also appear in the output
    or in another operand (no internal traces), which holds for all uses in
    this package.
    """
    values = [value_of(op) for op in operands]
    out = np.einsum(subscripts, *values)
    in_specs, out_spec = subscripts.replace(" ", "").split("->")
    specs = in_specs.split(",")

    def vjp(g):
        grads = []
        for i, spec in enumerate(specs):
            others = [s for j, s in enumerate(specs) if j != i]
            other_vals = [values[j] for j in range(len(values)) if j != i]
            sub = ",".join([out_spec] + others) + "->" + spec
            grads.append(np.einsum(sub, g, *other_vals))
        return tuple(grads)

    return _node(out, operands, vjp)


def transpose(a):
    va = value_of(a)
    out = va.T

    def vjp(g):
        return (g.T,)

    return _node(out, (a,), vjp)


def reshape(a, shape):
    va = value_of(a)
    out = va.reshape(shape)

    def vjp(g):
        return (g.reshape(va.shape),)

    return _node(out, (a,), vjp)


def concat(parts, axis=0):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _node(out, tuple(parts), vjp)


def take(a, key):
    """Slice/index view with scatter-add adjoint."""
    va = value_of(a)
    out = va[key]

    def vjp(g):
        full = np.zeros_like(va)
        np.add.at(full, key, g)
        return (full,)

    return _node(out, (a,), vjp)


def sum_all(a):
    va = value_of(a)
    out = np.asarray(va.sum())

    def vjp(g):
        return (np.broadcast_to(g, va.shape).copy() if np.ndim(g) == 0 else g * np.ones_like(va),)

    return _node(out, (a,), vjp)


def sum_axis(a, axis, keepdims=False):
    va = value_of(a)
    out = va.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, va.shape).copy(),)

    return _node(out, (a,), vjp)


def mean_all(a):
    va = value_of(a)
    n = va.size
    out = np.asarray(va.mean())

    def vjp(g):
        return (np.broadcast_to(g / n, va.shape).copy(),)

    return _node(out, (a,), vjp)


def mean_axis(a, axis, keepdims=False):
    va = value_of(a)
    n = va.shape[axis]
    out = va.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, va.shape).copy(),)

    return _node(out, (a,), vjp)


def sigmoid(a):
    va = value_of(a)
    out = 1.0 / (1.0 + np.exp(-va))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), vjp)


def silu(a):
    va = value_of(a)
    sig = 1.0 / (1.0 + np.exp(-va))
    out = va * sig

    def vjp(g):
        return (g * sig * (1.0 + va * (1.0 - sig)),)

    return _node(out, (a,), vjp)


def exp(a):
    va = value_of(a)
    out = np.exp(va)

    def vjp(g):
        return (g * out,)

    return _node(out, (a,), vjp)


def sqrt(a):
    va = value_of(a)
    out = np.sqrt(va)

    def vjp(g):
        return (g / (2.0 * out),)

    return _node(out, (a,), vjp)


def absolute(a):
    va = value_of(a)
    out = np.abs(va)

    def vjp(g):
        return (g * np.sign(va),)

    return _node(out, (a,), vjp)


def exact_sum(parts):
    """Order-independent exact sum of same-shaped arrays.

    Forward uses :func:`math.fsum` per component, so the result does not
    depend on the order of ``parts``; this is what makes permutation
    equivariance of neighbor aggregation bit-exact.
    """
    values = [value_of(p) for p in parts]
    if len(values) == 1:
        out = values[0].copy()
    else:
        stacked = np.stack(values)
        flat = stacked.reshape(len(values), -1)
        out = np.array([math.fsum(flat[:, k]) for k in range(flat.shape[1])])
        out = out.reshape(values[0].shape)

    def vjp(g):
        return tuple(g for _ in values)

    return _node(out, tuple(parts), vjp)


def paste_blocks(shape, placed):
    """Compose a dense matrix from (row, col, block) triples.

    Overlapping placements accumulate.  The adjoint slices the cotangent
    back out per block.
    """
    blocks = [b for (_, _, b) in placed]
    values = [value_of(b) for b in blocks]
    out = np.zeros(shape)
    for (r, c, _), v in zip(placed, values):
        out[r:r + v.shape[0], c:c + v.shape[1]] += v

    def vjp(g):
        return tuple(g[r:r + v.shape[0], c:c + v.shape[1]]
                     for (r, c, _), v in zip(placed, values))

    return _node(out, tuple(blocks), vjp)
