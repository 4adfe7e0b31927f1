"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Tensors form an implicit DAG through parent links; `backward()` walks a
topological order once and accumulates gradients into every reachable
node. Only the operations the decoder and its loss need are provided.
No fusion, no broadcasting beyond trailing-row bias adds, no views.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    MaskingError,
    NumericError,
    VocabularyError,
)

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array plus an optional gradient and parent links."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-accumulate gradients from this (scalar) tensor."""
        if self.values.size != 1:
            raise DimensionError(f"backward requires a scalar, got shape {self.shape}")
        order = topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


def topo_order(root: Tensor) -> list[Tensor]:
    """Topological order of the graph below `root` (parents first)."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(values, parents, backward) -> Tensor:
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; dA = dC B^T, dB = A^T dC."""
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {list(a.shape)} x {list(b.shape)}")
    av, bv = a.values, b.values

    def backward(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return _make(av @ bv, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {list(a.shape)}")

    def backward(g):
        _accum(a, g.T)

    return _make(a.values.T.copy(), (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; `b` may be a 1-D row broadcast over a's rows."""
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        if not (av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]):
            raise DimensionError(f"add shapes {list(av.shape)} vs {list(bv.shape)}")

    def backward(g):
        _accum(a, g)
        if bv.shape == av.shape:
            _accum(b, g)
        else:
            _accum(b, g.sum(axis=0))

    return _make(av + bv, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _make(a.values * s, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0.0

    def backward(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.values, 0.0), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = a.values
    u = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(u)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du))

    return _make(0.5 * x * (1.0 + th), (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {list(a.shape)} vs {list(b.shape)}")
    av, bv = a.values, b.values

    def backward(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    return _make(av * bv, (a, b), backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""

    def backward(g):
        _accum(a, np.broadcast_to(g, a.values.shape).astype(np.float64))

    return _make(np.float64(a.values.sum()), (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` at integer ids; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("embedding ids must be a flat list")
    if table.values.ndim != 2:
        raise DimensionError("embedding table must be a matrix")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise VocabularyError(
            f"id out of range for table of {table.shape[0]} rows"
        )

    def backward(g):
        dt = np.zeros_like(table.values)
        np.add.at(dt, idx, g)
        _accum(table, dt)

    return _make(table.values[idx], (table,), backward)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    """Stack matrices along rows; columns must agree."""
    if not tensors:
        raise EmptyInputError("concat_rows of nothing")
    cols = {t.shape[1] for t in tensors}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column mismatch: {sorted(cols)}")
    sizes = [t.shape[0] for t in tensors]

    def backward(g):
        at = 0
        for t, n in zip(tensors, sizes):
            _accum(t, g[at:at + n])
            at += n

    return _make(np.vstack([t.values for t in tensors]), tensors, backward)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise EmptyInputError("concat_cols of nothing")
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row mismatch: {sorted(rows)}")
    sizes = [t.shape[1] for t in tensors]

    def backward(g):
        at = 0
        for t, n in zip(tensors, sizes):
            _accum(t, g[:, at:at + n])
            at += n

    return _make(np.hstack([t.values for t in tensors]), tensors, backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[0]):
        raise DimensionError(f"row slice [{start}:{stop}] of {list(a.shape)}")

    def backward(g):
        da = np.zeros_like(a.values)
        da[start:stop] = g
        _accum(a, da)

    return _make(a.values[start:stop].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[1]):
        raise DimensionError(f"col slice [{start}:{stop}] of {list(a.shape)}")

    def backward(g):
        da = np.zeros_like(a.values)
        da[:, start:stop] = g
        _accum(a, da)

    return _make(a.values[:, start:stop].copy(), (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows of a matrix, returning a 1-D vector."""
    if a.values.ndim != 2 or a.shape[0] == 0:
        raise EmptyInputError(f"mean_rows of shape {list(a.shape)}")
    n = a.shape[0]

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.values.shape))

    return _make(a.values.mean(axis=0), (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no generator is given."""
    if p < 0.0 or p >= 1.0:
        raise DimensionError(f"dropout rate {p} outside [0, 1)")
    if p == 0.0 or rng is None:
        return a
    keep = (rng.random(a.values.shape) >= p) / (1.0 - p)

    def backward(g):
        _accum(a, g * keep)

    return _make(a.values * keep, (a,), backward)


# ---------------------------------------------------------------------------
# normalization, softmax, attention, loss
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row (x - mean) / sqrt(var + eps) * gain + bias, population var."""
    if eps <= 0.0:
        raise DimensionError("layer_norm eps must be positive")
    xv = x.values
    squeeze = xv.ndim == 1
    if squeeze:
        xv = xv[None, :]
    d = xv.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm gain/bias shape {list(gain.shape)}/{list(bias.shape)} vs d={d}"
        )
    mu = xv.mean(axis=1, keepdims=True)
    var = xv.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = xhat * gain.values + bias.values
    if squeeze:
        out = out[0]

    def backward(g):
        gv = g[None, :] if squeeze else g
        dxhat = gv * gain.values
        # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        _accum(x, dx[0] if squeeze else dx)
        _accum(gain, (gv * xhat).sum(axis=0))
        _accum(bias, gv.sum(axis=0))

    return _make(out, (x, gain, bias), backward)


def softmax_rows(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax; `mask` (bool, same shape) hides entries entirely.

    Raises MaskingError when a row has every entry hidden.
    """
    z = a.values
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise DimensionError(f"mask shape {list(mask.shape)} vs {list(z.shape)}")
        if not mask.any(axis=-1).all():
            raise MaskingError("softmax row with all entries masked")
        z = np.where(mask, z, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        # dz = (g - sum(g * s)) * s; masked entries have s == 0
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * s)

    return _make(s, (a,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask-fill(-inf)) v for 2-D q, k, v."""
    if q.values.ndim != 2 or k.values.ndim != 2 or v.values.ndim != 2:
        raise DimensionError("attention expects matrices")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"attention q/k dims {q.shape[1]} vs {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention k/v rows {k.shape[0]} vs {v.shape[0]}")
    if mask is not None and np.asarray(mask).shape != (q.shape[0], k.shape[0]):
        raise DimensionError("attention mask must be [Lq x Lk]")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    weights = softmax_rows(scores, mask)
    return matmul(weights, v)


def softmax_cross_entropy_smoothed(
    logits: Tensor,
    targets,
    smoothing: float = 0.0,
    ignore_index: int = -1,
) -> Tensor:
    """Label-smoothed cross entropy, averaged over non-ignored positions.

    The smoothed target puts 1 - smoothing on the label and
    smoothing / (V - 1) on every other class. Positions whose target
    equals `ignore_index` contribute nothing.
    """
    if logits.values.ndim != 2:
        raise DimensionError("logits must be [L x V]")
    L, V = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (L,):
        raise DimensionError(f"targets length {t.shape} vs {L} rows")
    if not 0.0 <= smoothing < 1.0:
        raise DimensionError(f"smoothing {smoothing} outside [0, 1)")
    if smoothing > 0.0 and V < 2:
        raise DimensionError("smoothing needs at least two classes")
    valid = t != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyInputError("all positions ignored; mean undefined")
    tt = np.where(valid, t, 0)
    if tt.min() < 0 or tt.max() >= V:
        raise VocabularyError(f"target id outside [0, {V})")

    z = logits.values
    m = z.max(axis=1, keepdims=True)
    logz = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - logz

    q = np.zeros((L, V))
    if smoothing > 0.0:
        q[valid] = smoothing / (V - 1)
    q[np.arange(L)[valid], tt[valid]] = 1.0 - smoothing
    loss = -(q * logp).sum() / n_valid
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy loss")

    def backward(g):
        p = np.exp(logp)
        grad = (p * q.sum(axis=1, keepdims=True) - q) * (float(g) / n_valid)
        grad[~valid] = 0.0
        _accum(logits, grad)

    return _make(np.float64(loss), (logits,), backward)
