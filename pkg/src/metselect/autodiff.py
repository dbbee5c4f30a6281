"""Reverse-mode differentiation over a linear tape of numpy arrays.

A :class:`Tape` records every primitive in execution order, so the record is
already topologically sorted and :func:`backward` is a single reverse sweep.
Leaves are either named parameters (which receive gradients) or constants
(which never do, however they enter the computation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .sparse import ShapeError, SparseCSR

LEAKY_SLOPE = 0.2


class Node:
    """One value on a tape."""

    __slots__ = ("tape", "value", "parents", "grad_fn", "kind", "name", "index", "requires_grad")

    def __init__(self, tape, value, parents=(), grad_fn=None, kind="op", name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.kind = kind
        self.name = name
        self.requires_grad = kind == "param" or any(p.requires_grad for p in parents)
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} {self.kind} shape={self.shape}>"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitives plus the parameter and constant leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on tape")
        node = Node(self, np.array(value, dtype=np.float64), kind="param", name=name)
        self.params[name] = node
        return node

    def constant(self, value, name: str | None = None) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), kind="const", name=name)

    @property
    def constants(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "const"]

    def lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("operands live on different tapes")
            return x
        return self.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a tape node")


def _record(value, parents, grad_fn) -> Node:
    value = np.asarray(value, dtype=np.float64)
    return Node(parents[0].tape, value, tuple(parents), grad_fn)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def backward(root: Node) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``root`` with respect to every parameter on its tape."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    tape = root.tape
    grads: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = grads.pop(node.index, None)
        if g is None or node.grad_fn is None:
            if g is not None:
                grads[node.index] = g
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        for parent, pg in zip(node.parents, node.grad_fn(g, needs)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    out = {}
    for name, p in tape.params.items():
        if p.index <= root.index and p.index in grads:
            out[name] = grads[p.index]
        else:
            out[name] = np.zeros_like(p.value)
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul of {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def grad_fn(g, needs):
        return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

    return _record(av @ bv, (a, b), grad_fn)


def affine_t(h, w, b) -> Node:
    """Fused ``h W^T + b`` for a square or rectangular ``W`` and row-broadcast ``b``."""
    tape = _tape_of(h, w, b)
    h, w, b = tape.lift(h), tape.lift(w), tape.lift(b)
    if h.value.ndim != 2 or w.value.ndim != 2 or h.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine of {h.shape} with W {w.shape} and b {b.shape}")
    hv, wv = h.value, w.value

    def grad_fn(g, needs):
        return (g @ wv if needs[0] else None,
                g.T @ hv if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)

    return _record(hv @ wv.T + b.value, (h, w, b), grad_fn)


def _broadcast_check(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(g, sb) if needs[1] else None,
        )

    return _record(a.value + b.value, (a, b), grad_fn)


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape

    def grad_fn(g, needs):
        return (
            _unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(-g, sb) if needs[1] else None,
        )

    return _record(a.value - b.value, (a, b), grad_fn)


def mul(a, b) -> Node:
    """Elementwise product with numpy broadcasting."""
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _broadcast_check(a, b)
    av, bv = a.value, b.value

    def grad_fn(g, needs):
        return (
            _unbroadcast(g * bv, av.shape) if needs[0] else None,
            _unbroadcast(g * av, bv.shape) if needs[1] else None,
        )

    return _record(av * bv, (a, b), grad_fn)


def scale(a: Node, c: float) -> Node:
    return _record(a.value * c, (a,), lambda g, needs: (g * c,))


def relu(a: Node) -> Node:
    # gradient at exactly 0 is 0
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g, needs: (g * mask,))


def leaky_relu(a: Node, slope: float = LEAKY_SLOPE) -> Node:
    factor = np.where(a.value > 0, 1.0, slope)
    return _record(a.value * factor, (a,), lambda g, needs: (g * factor,))


def spmm(adj: SparseCSR, x: Node) -> Node:
    """Sparse-dense product ``adj @ x``; ``adj`` is structural data and never differentiated."""
    if adj.cols != x.shape[0]:
        raise ShapeError(f"spmm of {adj.shape} and {x.shape}")
    adj_t = adj.transpose()
    return _record(adj.dot(x.value), (x,), lambda g, needs: (adj_t.dot(g),))


def gather_rows(x: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def grad_fn(g, needs):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return _record(x.value[idx], (x,), grad_fn)


def segment_sum(x: Node, segments, num_segments: int) -> Node:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segments, x.value)
    return _record(out, (x,), lambda g, needs: (g[segments],))


def segment_softmax(e: Node, segments, num_segments: int) -> Node:
    """Softmax of a 1-D score vector within each segment (max-shifted)."""
    segments = np.asarray(segments, dtype=np.int64)
    if e.value.ndim != 1 or len(segments) != e.shape[0]:
        raise ShapeError("segment_softmax expects a 1-D score per segment entry")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segments, e.value)
    ex = np.exp(e.value - seg_max[segments])
    denom = np.zeros(num_segments)
    np.add.at(denom, segments, ex)
    alpha = ex / denom[segments]

    def grad_fn(g, needs):
        dot = np.zeros(num_segments)
        np.add.at(dot, segments, g * alpha)
        return (alpha * (g - dot[segments]),)

    return _record(alpha, (e,), grad_fn)


def reshape(x: Node, shape) -> Node:
    old = x.shape
    return _record(x.value.reshape(shape), (x,), lambda g, needs: (g.reshape(old),))


def transpose(x: Node) -> Node:
    return _record(x.value.T, (x,), lambda g, needs: (g.T,))


def slice_rows(x: Node, lo: int, hi: int) -> Node:
    """``x[lo:hi]`` along the first axis."""
    shape = x.shape

    def grad_fn(g, needs):
        out = np.zeros(shape)
        out[lo:hi] = g
        return (out,)

    return _record(x.value[lo:hi], (x,), grad_fn)


def concat_cols(xs: Sequence[Node]) -> Node:
    widths = [x.shape[1] for x in xs]
    bounds = np.cumsum([0] + widths)

    def grad_fn(g, needs):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return _record(np.concatenate([x.value for x in xs], axis=1), tuple(xs), grad_fn)


def log_softmax(x: Node) -> Node:
    """Row-wise log-softmax with max subtraction."""
    v = x.value
    shifted = v - v.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return _record(
        out, (x,), lambda g, needs: (g - probs * g.sum(axis=1, keepdims=True),)
    )


def logsumexp(x: Node, mask=None) -> Node:
    """Row-wise log-sum-exp over the entries where ``mask`` is true."""
    v = x.value
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != v.shape:
        raise ShapeError("mask must match input shape")
    masked = np.where(mask, v, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    ex = np.where(mask, np.exp(masked - m), 0.0)
    s = ex.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        out = (m + np.log(s)).ravel()
    w = np.divide(ex, s, out=np.zeros_like(ex), where=s > 0)
    return _record(out, (x,), lambda g, needs: (w * g[:, None],))


def pick(x: Node, rows, cols) -> Node:
    """Vector of entries ``x[rows[k], cols[k]]``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def grad_fn(g, needs):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _record(x.value[rows, cols], (x,), grad_fn)


def sum_all(x: Node) -> Node:
    shape = x.shape
    return _record(
        np.array([[x.value.sum()]]), (x,), lambda g, needs: (np.full(shape, g.item()),)
    )


def mean_all(x: Node) -> Node:
    n = x.value.size
    return scale(sum_all(x), 1.0 / n)


def mahalanobis(h: Node, means: Node, chol: Node, chol_inv: np.ndarray | None = None) -> Node:
    """Squared Mahalanobis distances between every row of ``h`` and every row of ``means``.

    ``chol`` is the lower Cholesky factor of the (regularized) covariance. Both
    ``means`` and ``chol`` must be constants: the result is differentiated with
    respect to ``h`` only. ``chol_inv`` may carry a cached ``L^-1``.
    """
    for leaf, label in ((means, "means"), (chol, "chol")):
        if leaf.requires_grad:
            raise ValueError(f"{label} must be a constant leaf")
    L = chol.value
    d = L.shape[0]
    if h.shape[1] != d or means.shape[1] != d:
        raise ShapeError(f"embedding width {h.shape[1]} vs covariance {L.shape}")
    # one small triangular solve for L^-1, then every row is a matmul
    l_inv = chol_inv
    if l_inv is None:
        l_inv = solve_triangular(L, np.eye(d), lower=True, check_finite=False)
    z = h.value @ l_inv.T
    zm = means.value @ l_inv.T
    dist = np.maximum((z * z).sum(axis=1)[:, None] - 2.0 * (z @ zm.T) + (zm * zm).sum(axis=1), 0.0)

    def grad_fn(g, needs):
        gz = 2.0 * (g.sum(axis=1)[:, None] * z - g @ zm)
        return (gz @ l_inv, None, None)

    return _record(dist, (h, means, chol), grad_fn)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    max_error: float
    excluded: list[tuple[str, tuple]] = field(default_factory=list)
    checked: int = 0

    def __float__(self):
        return float(self.max_error)


def finite_difference_check(
    loss_fn: Callable[[Tape, dict[str, np.ndarray]], Node],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    kink_tol: float = 1e-3,
) -> GradCheckResult:
    """Compare tape gradients with central differences entry by entry.

    ``loss_fn(tape, values)`` must build the loss on ``tape`` and register each
    entry of ``values`` with ``tape.param``. The error per entry is
    ``|fd - grad| / max(1, |grad|)``. Entries whose one-sided differences
    disagree by more than ``kink_tol`` sit on a non-smooth point; they are
    listed in ``excluded`` instead of counted.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")

    def evaluate(values, label):
        tape = Tape()
        out = loss_fn(tape, values)
        val = float(out.value.ravel()[0])
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss while probing {label}")
        return val

    tape = Tape()
    base_values = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    root = loss_fn(tape, base_values)
    f0 = float(root.value.ravel()[0])
    grads = backward(root)

    result = GradCheckResult(max_error=0.0)
    for name, base in base_values.items():
        for idx in np.ndindex(base.shape):
            probe = {k: v.copy() for k, v in base_values.items()}
            label = f"{name}{list(idx)}"
            probe[name][idx] = base[idx] + eps
            f_plus = evaluate(probe, label)
            probe[name][idx] = base[idx] - eps
            f_minus = evaluate(probe, label)
            fd = (f_plus - f_minus) / (2 * eps)
            right = (f_plus - f0) / eps
            left = (f0 - f_minus) / eps
            if abs(right - left) > kink_tol * max(1.0, abs(fd)):
                result.excluded.append((name, idx))
                continue
            g = grads[name][idx]
            err = abs(fd - g) / max(1.0, abs(g))
            result.max_error = max(result.max_error, err)
            result.checked += 1
    return result
