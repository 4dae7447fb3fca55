"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A tape is built dynamically: every operation returns a DiffNode holding its
value, the parent nodes, and a closure mapping the output adjoint to per-parent
contributions. ``backward`` walks the tape once in reverse topological order
with a per-call adjoint buffer, so gradients through shared subexpressions sum
correctly and repeated backward calls accumulate into leaf grads without
double counting. Values are numpy float64 arrays; scalars are 0-d arrays.

Every operation validates its result and raises NonFiniteError on NaN/Inf
rather than letting them propagate.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(ValueError):
    """An operation produced (or was handed) NaN or Inf."""


class DiffNode:
    """One tape entry: a value, its accumulated gradient, and the backward rule."""

    __slots__ = ("value", "_grad", "parents", "backward_fn", "needs_grad")

    def __init__(self, value, parents=(), backward_fn=None, needs_grad=False):
        self.value = value
        self._grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs_grad = needs_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, arr) -> None:
        self._grad = arr

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self._grad = np.zeros_like(self.value)

    def detach(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"DiffNode(shape={self.value.shape}, needs_grad={self.needs_grad})"


def leaf(value, needs_grad: bool = True) -> DiffNode:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("leaf value contains NaN or Inf")
    return DiffNode(arr, needs_grad=needs_grad)


def constant(value) -> DiffNode:
    return leaf(value, needs_grad=False)


def _make(value: np.ndarray, parents, backward_fn, op: str) -> DiffNode:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")
    if any(p.needs_grad for p in parents):
        return DiffNode(value, tuple(parents), backward_fn, True)
    return DiffNode(value)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise ValueError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    return _make(a.value + b.value, (a, b), lambda g: ((a, g), (b, g)), "add")


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise ValueError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    return _make(a.value - b.value, (a, b), lambda g: ((a, g), (b, -g)), "sub")


def _reduce_to(g, target: DiffNode):
    if target.value.ndim == 0 and np.ndim(g) != 0:
        return np.sum(g)
    return g


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise product; one side may be a 0-d scalar node."""
    if a.value.shape != b.value.shape and a.value.ndim != 0 and b.value.ndim != 0:
        raise ValueError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")

    def backward(g):
        return ((a, _reduce_to(g * b.value, a)), (b, _reduce_to(g * a.value, b)))

    return _make(a.value * b.value, (a, b), backward, "mul")


def affine(x: DiffNode, scale: float = 1.0, shift: float = 0.0) -> DiffNode:
    """scale * x + shift with python-float coefficients."""
    return _make(scale * x.value + shift, (x,), lambda g: ((x, g * scale),), "affine")


def mul_const(x: DiffNode, c) -> DiffNode:
    """Elementwise product with a constant array (no gradient into c)."""
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), x.value.shape)
    return _make(x.value * c, (x,), lambda g: ((x, g * c),), "mul_const")


def add_colvec(mat: DiffNode, vec: DiffNode) -> DiffNode:
    """Add a length-m vector to every column of an (m, n) matrix."""
    if mat.value.ndim != 2 or vec.value.shape != (mat.value.shape[0],):
        raise ValueError(f"add_colvec shapes: {mat.value.shape} + {vec.value.shape}")

    def backward(g):
        return ((mat, g), (vec, g.sum(axis=1)))

    return _make(mat.value + vec.value[:, None], (mat, vec), backward, "add_colvec")


def mul_rowvec(mat: DiffNode, row: DiffNode) -> DiffNode:
    """Scale column j of an (m, n) matrix by row[j]."""
    if mat.value.ndim != 2 or row.value.shape != (mat.value.shape[1],):
        raise ValueError(f"mul_rowvec shapes: {mat.value.shape} * {row.value.shape}")

    def backward(g):
        return ((mat, g * row.value[None, :]), (row, np.sum(g * mat.value, axis=0)))

    return _make(mat.value * row.value[None, :], (mat, row), backward, "mul_rowvec")


def div(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise quotient; the denominator may be a 0-d scalar node."""
    if a.value.shape != b.value.shape and b.value.ndim != 0:
        raise ValueError(f"div shape mismatch: {a.value.shape} vs {b.value.shape}")

    def backward(g):
        gb = -g * a.value / (b.value * b.value)
        return ((a, g / b.value), (b, _reduce_to(gb, b)))

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value
    return _make(out, (a, b), backward, "div")


def div_rowvec(mat: DiffNode, row: DiffNode) -> DiffNode:
    """Divide column j of an (m, n) matrix by row[j]."""
    if mat.value.ndim != 2 or row.value.shape != (mat.value.shape[1],):
        raise ValueError(f"div_rowvec shapes: {mat.value.shape} / {row.value.shape}")
    out = mat.value / row.value[None, :]

    def backward(g):
        return ((mat, g / row.value[None, :]), (row, -np.sum(g * out, axis=0) / row.value))

    return _make(out, (mat, row), backward, "div_rowvec")


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Matrix product: (m,n)@(n,p) -> (m,p) or (m,n)@(n,) -> (m,)."""
    if a.value.ndim != 2:
        raise ValueError(f"matmul left operand must be 2-D, got {a.value.shape}")
    if b.value.ndim not in (1, 2):
        raise ValueError(f"matmul right operand must be 1-D or 2-D, got {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    if b.value.ndim == 2:

        def backward(g):
            return ((a, g @ b.value.T), (b, a.value.T @ g))

    else:

        def backward(g):
            return ((a, np.outer(g, b.value)), (b, a.value.T @ g))

    return _make(a.value @ b.value, (a, b), backward, "matmul")


def dot(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ValueError(f"dot expects equal 1-D shapes, got {a.value.shape}, {b.value.shape}")

    def backward(g):
        return ((a, g * b.value), (b, g * a.value))

    return _make(np.asarray(a.value @ b.value), (a, b), backward, "dot")


def concat(nodes: Sequence[DiffNode], axis: int = 0) -> DiffNode:
    if not nodes:
        raise ValueError("concat of nothing")
    nodes = tuple(nodes)
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)
    lead = (slice(None),) * axis

    def backward(g):
        return tuple(
            (node, g[lead + (slice(int(lo), int(hi)),)])
            for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:])
        )

    return _make(np.concatenate([n.value for n in nodes], axis=axis), nodes, backward, "concat")


def take_row(x: DiffNode, i: int) -> DiffNode:
    """Element i of a vector (as a 0-d scalar) or row i of a matrix."""
    if not 0 <= i < x.value.shape[0]:
        raise ValueError(f"row index {i} out of range for shape {x.value.shape}")

    def backward(g):
        buf = np.zeros_like(x.value)
        buf[i] = g
        return ((x, buf),)

    return _make(np.asarray(x.value[i]), (x,), backward, "take_row")


def take_col(x: DiffNode, j: int) -> DiffNode:
    if x.value.ndim != 2 or not 0 <= j < x.value.shape[1]:
        raise ValueError(f"column index {j} out of range for shape {x.value.shape}")

    def backward(g):
        buf = np.zeros_like(x.value)
        buf[:, j] = g
        return ((x, buf),)

    return _make(x.value[:, j].copy(), (x,), backward, "take_col")


def take_cols(x: DiffNode, ids: Sequence[int]) -> DiffNode:
    """Gather columns (duplicates allowed); adjoints scatter-add back."""
    ids = np.asarray(ids, dtype=np.intp)
    if x.value.ndim != 2:
        raise ValueError("take_cols expects a matrix")
    if ids.size and (ids.min() < 0 or ids.max() >= x.value.shape[1]):
        raise ValueError(f"column ids out of range for shape {x.value.shape}")

    def backward(g):
        buf = np.zeros_like(x.value)
        np.add.at(buf.T, ids, g.T)
        return ((x, buf),)

    return _make(x.value[:, ids], (x,), backward, "take_cols")


def sum_all(x: DiffNode) -> DiffNode:
    def backward(g):
        return ((x, np.broadcast_to(g, x.value.shape)),)

    return _make(np.asarray(x.value.sum()), (x,), backward, "sum_all")


def sum_axis0(x: DiffNode) -> DiffNode:
    """Column sums of a matrix: (m, n) -> (n,)."""
    if x.value.ndim != 2:
        raise ValueError("sum_axis0 expects a matrix")

    def backward(g):
        return ((x, np.broadcast_to(g[None, :], x.value.shape)),)

    return _make(x.value.sum(axis=0), (x,), backward, "sum_axis0")


def clamp(x: DiffNode, lo: float, hi: float) -> DiffNode:
    """Clip values; the gradient passes through only where no clipping happened."""
    inside = ((x.value > lo) & (x.value < hi)).astype(np.float64)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: ((x, g * inside),), "clamp")


# ---------------------------------------------------------------------------
# nonlinearities


def log(x: DiffNode) -> DiffNode:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.value)
    return _make(out, (x,), lambda g: ((x, g / x.value),), "log")


def _sigmoid_stable(v: np.ndarray) -> np.ndarray:
    # exp only of non-positive arguments, so saturated inputs cannot overflow
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: DiffNode) -> DiffNode:
    out = _sigmoid_stable(np.atleast_1d(x.value)).reshape(x.value.shape)
    return _make(out, (x,), lambda g: ((x, g * out * (1.0 - out)),), "sigmoid")


def tanh(x: DiffNode) -> DiffNode:
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: ((x, g * (1.0 - out * out)),), "tanh")


def relu(x: DiffNode) -> DiffNode:
    mask = (x.value > 0).astype(np.float64)
    return _make(x.value * mask, (x,), lambda g: ((x, g * mask),), "relu")


def softplus(x: DiffNode) -> DiffNode:
    out = np.logaddexp(0.0, x.value)
    slope = _sigmoid_stable(np.atleast_1d(x.value)).reshape(x.value.shape)
    return _make(out, (x,), lambda g: ((x, g * slope),), "softplus")


def softmax(x: DiffNode) -> DiffNode:
    """Softmax over a vector, or independently over each column of a matrix."""
    v = x.value
    shifted = v - v.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=0, keepdims=True)
        return ((x, out * (g - inner)),)

    return _make(out, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# backward pass


def backward(root: DiffNode) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's grad.

    The root must be a scalar. Interior adjoints live in a per-call buffer,
    so repeated calls without zeroing add up leaf gradients exactly -- which
    is how per-query losses accumulate into a batch gradient.
    """
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    adjoints: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.needs_grad:
                if node._grad is None:
                    node._grad = np.zeros_like(node.value)
                node._grad = node._grad + g
            continue
        for parent, contribution in node.backward_fn(g):
            if not parent.needs_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + contribution
            else:
                adjoints[key] = contribution


def zero_grads(params: Iterable[DiffNode]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# initialization and optimization


def xavier_init(shape, rng) -> np.ndarray:
    """Xavier-uniform samples for 2-D weights; 1-D and scalar shapes are biases -> zeros.

    ``rng`` is a numpy Generator or an integer seed.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    shape = tuple(int(s) for s in np.atleast_1d(np.asarray(shape, dtype=int)))
    if any(s == 0 for s in shape):
        raise ValueError(f"zero dimension in shape {shape}")
    if len(shape) <= 1:
        return np.zeros(shape)
    if len(shape) != 2:
        raise ValueError(f"expected 2-D weight or 1-D bias shape, got {shape}")
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


class Adam:
    """Adam with bias correction over a named set of leaf parameters."""

    def __init__(self, params: dict[str, DiffNode], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g.shape != p.value.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / (1.0 - b1 ** self.step_count)
            v_hat = self.v[name] / (1.0 - b2 ** self.step_count)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def zero_grad(self) -> None:
        zero_grads(self.params.values())


def clip_global_norm(params: Iterable[DiffNode], max_norm: float = 5.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    params = list(params)
    total = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for p in params:
            p.grad = p.grad * factor
    return total


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_gradients(
    loss_fn: Callable[[], float],
    params: dict[str, DiffNode],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of loss_fn for every entry of every parameter.

    loss_fn must recompute the loss from the parameters' current values.
    """
    grads = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            g[i] = (up - down) / (2.0 * h)
        grads[name] = g.reshape(p.value.shape)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Write parameters as a versioned JSON map of name -> shape + row-major values."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "manifest": manifest,
        "parameters": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["parameters"].items()
    }
    return arrays, payload["manifest"]
