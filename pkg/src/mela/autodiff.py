"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value on a tape is a 2-D ``numpy.ndarray`` of dtype float64. A tape is
an append-only list of nodes; insertion order is a topological order, so the
backward sweep is a single reversed pass.

Example::

    tape = Tape()
    w = tape.leaf(np.ones((2, 1)))
    x = tape.constant(np.array([[1.0, 2.0]]))
    loss = op_mse(op_matmul(x, w), np.array([[0.0]]))
    grads = backward(tape, loss)
    grads[w.id]   # -> [[6.], [12.]]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections.abc import Sequence
from typing import Callable, Optional

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptyDatasetError(ValueError):
    """An operation that pools over examples received zero rows."""


class NumericInstabilityError(FloatingPointError):
    """A NaN or Inf was found in a value or gradient."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


def as_tensor(value) -> np.ndarray:
    """Coerce ``value`` to a 2-D float64 array (scalars become 1x1)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


def is_finite(value: np.ndarray) -> bool:
    # a sum is finite only if every term is (barring overflow near 1e308)
    return math.isfinite(value.sum())


@dataclass(frozen=True)
class ArgmaxRecord:
    """Which example (row) won one column of a row-wise max-pool."""

    column: int
    row: int


class Node:
    __slots__ = ("id", "value", "op", "parents", "saved", "requires_grad", "_vjp", "tape")

    def __init__(self, tape, value, op, parents=(), vjp=None, saved=None, requires_grad=False):
        self.tape = tape
        self.id = len(tape.nodes)
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.saved = saved
        self.requires_grad = requires_grad
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


class Tape:
    """Append-only computation record. One tape per forward/backward pair."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaf_ids: list[int] = []

    def _push(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        """A differentiable input."""
        node = self._push(Node(self, as_tensor(value), "leaf", requires_grad=True))
        self.leaf_ids.append(node.id)
        return node

    def constant(self, value) -> Node:
        """A non-differentiable input (data, targets)."""
        return self._push(Node(self, as_tensor(value), "const"))

    def all_finite(self) -> bool:
        return all(is_finite(n.value) for n in self.nodes)

    def record(self, value, op, parents, vjp, saved=None) -> Node:
        requires = any(p.requires_grad for p in parents)
        return self._push(Node(self, value, op, parents, vjp if requires else None, saved, requires))


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def op_matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} and {b.shape}")
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return tape.record(av @ bv, "matmul", (a, b), vjp)


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` where every row goes through the same 1-row product.

    Plain ``a @ b`` may round a row differently depending on how many rows
    share the call (BLAS picks kernels by shape). Stacking the rows as a
    batch of ``1 x k`` matrices makes each output row a function of that
    input row alone, so permuting or duplicating rows is bitwise exact.
    """
    return (a[:, None, :] @ b)[:, 0, :]


def op_matmul_rows(a: Node, b: Node) -> Node:
    """:func:`op_matmul` with the row-independent forward of :func:`rowwise_matmul`."""
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} and {b.shape}")
    tape = _same_tape(a, b)
    av, bv = a.value, b.value

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return tape.record(rowwise_matmul(av, bv), "matmul_rows", (a, b), vjp)


def op_add_bias(x: Node, bias: Node) -> Node:
    if bias.shape[0] != 1 or bias.shape[1] != x.shape[1]:
        raise DimensionError(f"bias of shape {bias.shape} does not fit rows of shape {x.shape}")
    tape = _same_tape(x, bias)

    def vjp(g):
        return (g, g.sum(axis=0, keepdims=True) if bias.requires_grad else None)

    return tape.record(x.value + bias.value, "add_bias", (x, bias), vjp)


def op_add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    tape = _same_tape(a, b)
    return tape.record(a.value + b.value, "add", (a, b), lambda g: (g, g))


def op_leaky_relu(x: Node, slope: float) -> Node:
    if not 0.0 < slope <= 1.0:
        raise ContractError(f"leaky ReLU slope must lie in (0, 1], got {slope}")
    tape = _same_tape(x)
    # derivative 1 at exactly zero
    negative = x.value < 0
    out = np.where(negative, slope * x.value, x.value)

    def vjp(g):
        return (np.where(negative, slope * g, g),)

    return tape.record(out, "leaky_relu", (x,), vjp, saved=negative)


class PoolRecords(Sequence):
    """Read-only list of :class:`ArgmaxRecord`, one per pooled column."""

    __slots__ = ("rows",)

    def __init__(self, rows: np.ndarray):
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self.rows)
        return ArgmaxRecord(int(i), int(self.rows[i]))

    def __repr__(self):
        return f"PoolRecords({self.rows.tolist()})"


def op_maxpool_rows(x: Node) -> tuple[Node, PoolRecords]:
    """Column-wise max over rows. Ties go to the smallest row index."""
    n, m = x.shape
    if n == 0:
        raise EmptyDatasetError("max-pool over zero examples")
    tape = _same_tape(x)
    winners = np.argmax(x.value, axis=0)  # argmax returns the first maximal index
    cols = np.arange(m)
    out = x.value[winners, cols].reshape(1, m)

    def vjp(g):
        gx = np.zeros((n, m))
        gx[winners, cols] = g[0]
        return (gx,)

    node = tape.record(out, "maxpool_rows", (x,), vjp, saved=winners)
    return node, PoolRecords(winners)


def op_mse(pred: Node, target) -> Node:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: prediction {pred.shape}, target {target.shape}")
    tape = _same_tape(pred)
    diff = pred.value - target
    count = diff.size

    def vjp(g):
        return (g[0, 0] * 2.0 * diff / count,)

    value = np.array([[np.dot(diff.ravel(), diff.ravel()) / count]])
    return tape.record(value, "mse", (pred,), vjp)


def op_concat_cols(a: Node, b: Node) -> Node:
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat needs equal row counts, got {a.shape} and {b.shape}")
    tape = _same_tape(a, b)
    p = a.shape[1]

    def vjp(g):
        return (g[:, :p], g[:, p:])

    return tape.record(np.concatenate([a.value, b.value], axis=1), "concat_cols", (a, b), vjp)


def op_concat_rows(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"row concat needs equal column counts, got {a.shape} and {b.shape}")
    tape = _same_tape(a, b)
    n = a.shape[0]

    def vjp(g):
        return (g[:n], g[n:])

    return tape.record(np.concatenate([a.value, b.value], axis=0), "concat_rows", (a, b), vjp)


def op_reshape(x: Node, shape: tuple[int, int]) -> Node:
    """Row-major reshape."""
    if shape[0] * shape[1] != x.value.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    tape = _same_tape(x)
    old = x.shape
    return tape.record(x.value.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def op_sum(x: Node) -> Node:
    tape = _same_tape(x)
    shape = x.shape
    return tape.record(np.array([[x.value.sum()]]), "sum", (x,), lambda g: (np.full(shape, g[0, 0]),))


def op_take(x: Node, row: int, col: int) -> Node:
    """Select one entry as a 1x1 node."""
    tape = _same_tape(x)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[row, col] = g[0, 0]
        return (gx,)

    return tape.record(x.value[row : row + 1, col : col + 1].copy(), "take", (x,), vjp)


def backward(tape: Tape, root: Node, check_finite: bool = True) -> dict[int, np.ndarray]:
    """Gradients of scalar ``root`` with respect to every leaf of ``tape``.

    Returns a dict keyed by leaf id. Leaves that do not reach ``root`` get
    zero gradients of their own shape. A non-finite root value or leaf
    gradient raises :class:`NumericInstabilityError`; any NaN or Inf inside
    the graph surfaces in one of those.
    """
    if root.tape is not tape:
        raise ContractError("root does not belong to this tape")
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

    grads: list[Optional[np.ndarray]] = [None] * (root.id + 1)
    if check_finite and not is_finite(root.value):
        raise NumericInstabilityError(f"non-finite root value {root.value[0, 0]!r}")
    grads[root.id] = np.ones((1, 1))
    nodes = tape.nodes
    for i in range(root.id, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            j = parent.id
            grads[j] = pg if grads[j] is None else grads[j] + pg

    out = {}
    for leaf_id in tape.leaf_ids:
        g = grads[leaf_id] if leaf_id <= root.id else None
        if g is None:
            g = np.zeros_like(nodes[leaf_id].value)
        elif check_finite and not is_finite(g):
            raise NumericInstabilityError(f"non-finite gradient for leaf {leaf_id}")
        out[leaf_id] = g
    return out


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = fn(x)
        flat[k] = orig - step
        lo = fn(x)
        flat[k] = orig
        gflat[k] = (hi - lo) / (2 * step)
    return grad
