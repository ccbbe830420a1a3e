"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive in execution order. Values are plain
read-only ``numpy`` arrays; each recorded :class:`Node` carries the closure that
maps its output gradient to its parents' gradients. :meth:`Tape.backward`
sweeps the tape in reverse and sums fan-out contributions.

Broadcasting is deliberately limited to adding a bias vector onto the rows of
a matrix (see :func:`affine`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

SQRT_FLOOR = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    id: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    backward_fn: BackwardFn | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element value, got shape {self.shape}")
        return float(self.value.reshape(()))


def as_tensor(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.size == 0 or 0 in arr.shape:
        raise DimensionError(f"empty tensor of shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError("tensor contains NaN or Inf")
    return arr


class Tape:
    """Single-owner record of one computation."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, parents: Sequence[Node], value: np.ndarray,
               backward_fn: BackwardFn | None) -> Node:
        for p in parents:
            if p.id >= len(self.nodes) or self.nodes[p.id] is not p:
                raise ContractError(f"parent node {p.id} does not belong to this tape")
        value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericError(f"non-finite value produced by {op}")
        value.flags.writeable = False
        node = Node(len(self.nodes), op, tuple(p.id for p in parents), value, backward_fn)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        return self.record("leaf", (), as_tensor(value), None)

    def backward(self, seed: Node) -> dict[int, np.ndarray]:
        """Return d(seed)/d(node) for every node on the tape."""
        if seed.value.size != 1:
            raise ContractError(f"backward seed must be scalar, got shape {seed.shape}")
        grads: dict[int, np.ndarray] = {seed.id: np.ones_like(seed.value)}
        for node in reversed(self.nodes[: seed.id + 1]):
            g = grads.get(node.id)
            if g is None or node.backward_fn is None:
                continue
            contribs = node.backward_fn(g)
            for pid, c in zip(node.parents, contribs):
                if c is None:
                    continue
                prev = grads.get(pid)
                grads[pid] = c if prev is None else prev + c
        for node in self.nodes:
            if node.id not in grads:
                grads[node.id] = np.zeros_like(node.value)
        return grads


def _check_same(a: Node, b: Node, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra ---------------------------------------------------------

def affine(tape: Tape, x: Node, W: Node, b: Node) -> Node:
    """``W x + b`` for a vector ``x``, or ``x W^T + b`` row-wise for a matrix."""
    if W.value.ndim != 2 or b.value.ndim != 1 or x.value.ndim not in (1, 2):
        raise DimensionError(f"affine: bad ranks x{x.shape} W{W.shape} b{b.shape}")
    m, n = W.shape
    if x.shape[-1] != n or b.shape[0] != m:
        raise DimensionError(f"affine: x{x.shape} incompatible with W{W.shape}, b{b.shape}")
    xv, Wv = x.value, W.value
    out = xv @ Wv.T + b.value

    def back(g):
        if xv.ndim == 1:
            return g @ Wv, np.outer(g, xv), g
        return g @ Wv, g.T @ xv, g.sum(axis=0)

    return tape.record("affine", (x, W, b), out, back)


def matmul(tape: Tape, A: Node, B: Node) -> Node:
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: shapes {A.shape} and {B.shape} do not conform")
    Av, Bv = A.value, B.value
    return tape.record("matmul", (A, B), Av @ Bv, lambda g: (g @ Bv.T, Av.T @ g))


def concat(tape: Tape, xs: Sequence[Node], axis: int = 0) -> Node:
    vals = [x.value for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[v.shape for v in vals]}: {exc}") from None
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return tape.record("concat", tuple(xs), out, back)


def take_rows(tape: Tape, X: Node, rows) -> Node:
    """Gather rows of a matrix; the backward pass scatter-adds."""
    idx = np.asarray(rows, dtype=np.intp)
    n = X.shape[0]
    if idx.size == 0 or idx.min() < -n or idx.max() >= n:
        raise DimensionError(f"take_rows: indices out of range for {X.shape}")

    def back(g):
        out = np.zeros(X.shape)
        np.add.at(out, idx, g)
        return (out,)

    return tape.record("take_rows", (X,), X.value[idx], back)


def sqdist(tape: Tape, A: Node, B: Node) -> Node:
    """Pairwise squared Euclidean distances between rows, shape ``n x m``."""
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"sqdist: shapes {A.shape} and {B.shape} do not conform")
    Av, Bv = A.value, B.value
    diff = Av[:, None, :] - Bv[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def back(g):
        gd = 2.0 * g[:, :, None] * diff
        return gd.sum(axis=1), -gd.sum(axis=0)

    return tape.record("sqdist", (A, B), out, back)


def reshape(tape: Tape, x: Node, shape) -> Node:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {old} -> {shape}: {exc}") from None
    return tape.record("reshape", (x,), out, lambda g: (g.reshape(old),))


# -- elementwise ------------------------------------------------------------

def add(tape: Tape, a: Node, b: Node) -> Node:
    _check_same(a, b, "add")
    return tape.record("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(tape: Tape, a: Node, b: Node) -> Node:
    _check_same(a, b, "sub")
    return tape.record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(tape: Tape, a: Node, b: Node) -> Node:
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return tape.record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(tape: Tape, x: Node, c: float) -> Node:
    c = float(c)
    return tape.record("scale", (x,), c * x.value, lambda g: (c * g,))


def mean(tape: Tape, x: Node, exact: bool = False) -> Node:
    """Mean of all entries. ``exact`` uses correctly rounded summation, which
    makes the result independent of element order."""
    n = x.value.size
    shape = x.shape
    val = math.fsum(x.value.ravel().tolist()) / n if exact else x.value.mean()
    return tape.record("mean", (x,), np.asarray(val),
                       lambda g: (np.full(shape, float(g) / n),))


def exp(tape: Tape, x: Node) -> Node:
    with np.errstate(over="ignore"):
        out = np.exp(x.value)
    return tape.record("exp", (x,), out, lambda g: (g * out,))


def square(tape: Tape, x: Node) -> Node:
    xv = x.value
    return tape.record("square", (x,), xv * xv, lambda g: (2.0 * g * xv,))


def sqrt_floor(tape: Tape, x: Node, floor: float = SQRT_FLOOR) -> Node:
    """``sqrt(max(x, floor))``; the derivative is evaluated at the clamped value."""
    root = np.sqrt(np.maximum(x.value, floor))
    return tape.record("sqrt_floor", (x,), root, lambda g: (0.5 * g / root,))


def sigmoid(tape: Tape, x: Node) -> Node:
    s = expit(x.value)
    return tape.record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh_act(tape: Tape, x: Node) -> Node:
    t = np.tanh(x.value)
    return tape.record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def leaky_relu(tape: Tape, x: Node, alpha: float = 0.2) -> Node:
    if alpha < 0:
        raise ContractError(f"leaky_relu: alpha must be >= 0, got {alpha}")
    slope = np.where(x.value > 0, 1.0, alpha)
    return tape.record("leaky_relu", (x,), x.value * slope, lambda g: (g * slope,))


# -- losses -----------------------------------------------------------------

def softmax_cross_entropy(tape: Tape, logits: Node, label) -> Node:
    """Negative log-softmax at ``label``.

    For a ``B x K`` logit matrix ``label`` is a length-``B`` index array and the
    result is the mean over rows.
    """
    z = logits.value
    if z.ndim not in (1, 2):
        raise DimensionError(f"softmax_cross_entropy: logits must be 1-D or 2-D, got {z.shape}")
    K = z.shape[-1]
    Z = z.reshape(-1, K)
    y = np.atleast_1d(np.asarray(label))
    if y.shape != (Z.shape[0],) or not np.issubdtype(y.dtype, np.integer):
        raise DimensionError(f"softmax_cross_entropy: labels {y.shape} for logits {z.shape}")
    if y.min() < 0 or y.max() >= K:
        raise IndexError(f"label out of range [0, {K}): {y.tolist()}")
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(Z.shape[0])
    loss = (log_norm - shifted[rows, y]).mean()
    probs = np.exp(shifted - log_norm[:, None])

    def back(g):
        d = probs.copy()
        d[rows, y] -= 1.0
        d *= float(g) / Z.shape[0]
        return (d.reshape(z.shape),)

    return tape.record("softmax_ce", (logits,), np.asarray(loss), back)


# -- verification -----------------------------------------------------------

def grad_check(f: Callable[[Tape, Node], Node], x0, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f(tape, x)`` must build a scalar on ``tape`` from the leaf ``x``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x0 = as_tensor(x0)
    tape = Tape()
    x = tape.leaf(x0)
    analytic = tape.backward(f(tape, x))[x.id]

    def value(v: np.ndarray) -> float:
        t = Tape()
        try:
            out = f(t, t.leaf(v)).item()
        except NumericError as exc:
            raise NumericError(f"grad_check probe failed: {exc}") from None
        if not np.isfinite(out):
            raise NumericError("grad_check probe produced a non-finite value")
        return out

    flat = x0.ravel()
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += eps
        lo[i] -= eps
        numeric[i] = (value(hi.reshape(x0.shape)) - value(lo.reshape(x0.shape))) / (2 * eps)
    a = analytic.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
