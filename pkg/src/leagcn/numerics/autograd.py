"""Eager reverse-mode autodiff over dense float64 arrays.

Every op builds a ``Tensor`` that remembers its parents and a closure that
pushes the upstream gradient back to them. The op set is deliberately
closed: each model equation is written in terms of these primitives so the
whole gradient surface can be finite-difference checked.
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 parents: tuple["Tensor", ...] = (), op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value produced by op '{op}'")
        self.data = arr
        self.parents = parents
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op}{label}, shape={self.shape})"

    # operator sugar for the handful of ops that read naturally infix
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="const")


def _make(data, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
    out = Tensor(data, parents=parents, op=op)
    if out.requires_grad:
        out.backward_fn = backward
    return out


def _mismatch(op: str, *shapes) -> ShapeError:
    shown = " vs ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"shape mismatch in {op}: {shown}")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _mismatch("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), "matmul", backward)


def spmm(matrix: sp.spmatrix, b: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor (graph propagation)."""
    if b.data.ndim != 2 or matrix.shape[1] != b.shape[0]:
        raise _mismatch("spmm", matrix.shape, b.shape)

    def backward(g):
        return (np.asarray(matrix.T @ g),)

    return _make(np.asarray(matrix @ b.data), (b,), "spmm", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise _mismatch("transpose", a.shape)
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: (g.T,))


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    """Same-shape add; ``b`` may also be a bias row added to every row of ``a``."""
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), "add", lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _make(a.data + b.data, (a, b), "add", lambda g: (g, g.sum(axis=0)))
    raise _mismatch("add", a.shape, b.shape)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _mismatch("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), "scale", lambda g: (g * c,))


def scale_rows(a: Tensor, w: Tensor) -> Tensor:
    """Multiply row r of ``a`` (N, d) by the scalar ``w[r, 0]`` of an (N, 1) column."""
    if a.data.ndim != 2 or w.shape != (a.shape[0], 1):
        raise _mismatch("scale_rows", a.shape, w.shape)
    ad, wd = a.data, w.data
    return _make(ad * wd, (a, w), "scale_rows",
                 lambda g: (g * wd, (g * ad).sum(axis=1, keepdims=True)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ShapeError("concat of zero tensors")
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise _mismatch("concat", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def backward(g):
        return tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), "concat", backward)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= lo < hi <= a.shape[1]:
        raise ShapeError(f"slice_cols [{lo}:{hi}] out of range for shape {a.shape}")
    n_cols = a.shape[1]

    def backward(g):
        full = np.zeros((g.shape[0], n_cols))
        full[:, lo:hi] = g
        return (full,)

    return _make(a.data[:, lo:hi].copy(), (a,), "slice_cols", backward)


# ---------------------------------------------------------------- normalizers

def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise _mismatch("softmax_rows", a.shape)
    y = _softmax(a.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (a,), "softmax_rows", backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise _mismatch("log_softmax_rows", a.shape)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(y, (a,), "log_softmax_rows", backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise _mismatch("cross_entropy", logits.shape, targets.shape)
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(targets))
    nll = log_z - shifted[rows, targets]
    p = np.exp(shifted - log_z[:, None])

    def backward(g):
        grad = p.copy()
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / len(targets)),)

    return _make(nll.mean(), (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _make(a.data.sum(), (a,), "sum", lambda g: (np.full(shape, float(g)),))
    return _make(a.data.sum(axis=axis), (a,), "sum",
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / count)


def l2_penalty(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.sum(ad * ad), (a,), "l2_penalty", lambda g: (2.0 * float(g) * ad,))


# ---------------------------------------------------------------- indexing

def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Embedding lookup: rows of ``table`` selected by an integer index vector."""
    index = np.asarray(index, dtype=np.int64)
    if table.data.ndim != 2 or index.ndim != 1:
        raise _mismatch("gather", table.shape, index.shape)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"gather index out of range for table with {table.shape[0]} rows")
    rows = table.shape[0]

    def backward(g):
        return (_segment_sum(g, index, rows),)

    return _make(table.data[index], (table,), "gather", backward)


def _check_segments(op: str, a: Tensor, segments: np.ndarray, n_segments: int) -> np.ndarray:
    segments = np.asarray(segments, dtype=np.int64)
    if a.data.ndim != 2 or segments.shape != (a.shape[0],):
        raise _mismatch(op, a.shape, segments.shape)
    if segments.size and (segments.min() < 0 or segments.max() >= n_segments):
        raise IndexError(f"{op}: segment id out of range [0, {n_segments})")
    return segments


def _segment_sum(x: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    # sparse indicator product: same result as np.add.at, much faster
    indicator = sp.csr_matrix((np.ones(len(segments)), (segments, np.arange(len(segments)))),
                              shape=(n_segments, len(segments)))
    return np.asarray(indicator @ x)


def segment_sum(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Sum the rows of ``a`` that share a segment id; rows of a ragged batch."""
    segments = _check_segments("segment_sum", a, segments, n_segments)
    return _make(_segment_sum(a.data, segments, n_segments), (a,), "segment_sum",
                 lambda g: (g[segments],))


def segment_mean(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    segments = _check_segments("segment_mean", a, segments, n_segments)
    counts = np.bincount(segments, minlength=n_segments).astype(np.float64)
    if np.any(counts == 0):
        raise ShapeError("segment_mean: empty segment")
    inv = (1.0 / counts)[:, None]
    return _make(_segment_sum(a.data, segments, n_segments) * inv, (a,), "segment_mean",
                 lambda g: ((g * inv)[segments],))


def segment_l1_normalize(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Divide each column entry by that column's sum over the rows of its segment.

    Expects positive inputs (softmax output); each segment's columns then sum to 1.
    """
    segments = _check_segments("segment_l1_normalize", a, segments, n_segments)
    totals = _segment_sum(a.data, segments, n_segments)
    denom = totals[segments]
    y = a.data / denom

    def backward(g):
        inner = _segment_sum(g * y, segments, n_segments)[segments]
        return ((g - inner) / denom,)

    return _make(y, (a,), "segment_l1_normalize", backward)


def segment_softmax(a: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of each column taken separately over the rows of each segment."""
    segments = _check_segments("segment_softmax", a, segments, n_segments)
    x = a.data
    peak = np.full((n_segments, x.shape[1]), -np.inf)
    np.maximum.at(peak, segments, x)
    z = np.exp(x - peak[segments])
    y = z / _segment_sum(z, segments, n_segments)[segments]

    def backward(g):
        dot = _segment_sum(g * y, segments, n_segments)[segments]
        return (y * (g - dot),)

    return _make(y, (a,), "segment_softmax", backward)


# ---------------------------------------------------------------- regularization

def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * mask, (a,), "dropout", lambda g: (g * mask,))


# ---------------------------------------------------------------- reverse pass

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every named parameter.

    Parameters the loss does not reach get zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return {name: np.array(grads.get(id(t), np.zeros_like(t.data)), dtype=np.float64)
            for name, t in params.items()}


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, step: float = 1e-4,
                       entries: Iterable[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central finite differences of ``fn()`` with respect to ``target.data`` (in place)."""
    grad = np.zeros_like(target.data)
    flat_idx = entries if entries is not None else np.ndindex(target.shape)
    for idx in flat_idx:
        orig = target.data[idx]
        target.data[idx] = orig + step
        up = float(fn().data)
        target.data[idx] = orig - step
        down = float(fn().data)
        target.data[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
