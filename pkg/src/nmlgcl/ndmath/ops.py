"""Differentiable kernels. Every op works on taped and constant tensors alike."""

from __future__ import annotations

from collections import Counter
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError
from .tape import Tensor, as_tensor, tape_of

#: process-wide counters for numeric safeguards (norm clamps, log floors)
events: Counter = Counter()

NORM_FLOOR = 1e-12


def _emit(tape, key, count):
    if count:
        events[key] += int(count)
        if tape is not None:
            tape.events[key] += int(count)


def _op(value, inputs, rule) -> Tensor:
    tape = tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(value, inputs, rule)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def constant(x) -> Tensor:
    return Tensor(x.value if isinstance(x, Tensor) else x)


detach = constant


# ----------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def rule(g):
        return g @ bv.T, av.T @ g

    return _op(av @ bv, (a, b), rule)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _op(a.value.T.copy(), (a,), lambda g: (g.T,))


def spmm(s, b) -> Tensor:
    """Sparse (constant) times dense."""
    m = getattr(s, "matrix", s)
    if not sp.issparse(m):
        m = sp.csr_matrix(m)
    b = as_tensor(b)
    if m.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: {m.shape} @ {b.shape}")
    mt = m.T.tocsr()
    return _op(np.asarray(m @ b.value), (b,), lambda g: (np.asarray(mt @ g),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _op(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _op(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _op(a.value - b.value, (a, b), lambda g: (g, -g))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "multiply")
    av, bv = a.value, b.value
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def multiply_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _op(a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _op(a.value + float(c), (a,), lambda g: (g,))


def add_row(x, row) -> Tensor:
    """``x + row`` with a 1 x k row broadcast over every row of ``x``."""
    x, row = as_tensor(x), as_tensor(row)
    if row.shape != (1, x.shape[1]):
        raise ShapeError(f"add_row: {x.shape} + {row.shape}")
    return _op(x.value + row.value, (x, row), lambda g: (g, g.sum(axis=0, keepdims=True)))


def add_col(x, col) -> Tensor:
    """``x + col`` with an n x 1 column broadcast over every column."""
    x, col = as_tensor(x), as_tensor(col)
    if col.shape != (x.shape[0], 1):
        raise ShapeError(f"add_col: {x.shape} + {col.shape}")
    return _op(x.value + col.value, (x, col), lambda g: (g, g.sum(axis=1, keepdims=True)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _op(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _op(out, (a,), lambda g: (g * out,))


def log(a, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` set, inputs are clamped from below first.

    Clamped entries receive zero gradient and are counted in ``events``.
    """
    a = as_tensor(a)
    v = a.value
    if floor is not None:
        clamped = v < floor
        _emit(a.tape, "log_clamp", clamped.sum())
        v = np.where(clamped, floor, v)
    else:
        clamped = None
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(v)

    def rule(g):
        d = g / v
        if clamped is not None:
            d = np.where(clamped, 0.0, d)
        return (d,)

    return _op(out, (a,), rule)


def concat_rows_pairwise(u, v) -> Tensor:
    """All ordered row pairs: row ``i * len(v) + j`` is ``[u_i, v_j]``."""
    u, v = as_tensor(u), as_tensor(v)
    nu, du = u.shape
    nv, dv = v.shape
    out = np.empty((nu, nv, du + dv))
    out[:, :, :du] = u.value[:, None, :]
    out[:, :, du:] = v.value[None, :, :]

    def rule(g):
        g3 = g.reshape(nu, nv, du + dv)
        return g3[:, :, :du].sum(axis=1), g3[:, :, du:].sum(axis=0)

    return _op(out.reshape(nu * nv, du + dv), (u, v), rule)


# ----------------------------------------------------------------- reductions


def reduce_sum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _op(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def reduce_mean(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.value.size
    return _op(np.array([[a.value.mean()]]), (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def sum_rows(a) -> Tensor:
    """Row sums as an n x 1 column."""
    a = as_tensor(a)
    shape = a.shape
    return _op(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape),))


def diagonal(a) -> Tensor:
    """Main diagonal of a square tensor as an n x 1 column."""
    a = as_tensor(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"diagonal of non-square {a.shape}")

    def rule(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g[:, 0]
        return (out,)

    return _op(np.diag(a.value).reshape(n, 1).copy(), (a,), rule)


def row_max(a) -> np.ndarray:
    """Row maxima as a plain n x 1 array (not differentiated)."""
    return as_tensor(a).value.max(axis=1, keepdims=True)


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _op(y, (a,), rule)


def logsumexp_row(a) -> Tensor:
    a = as_tensor(a)
    c = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - c)
    s = e.sum(axis=1, keepdims=True)
    out = c + np.log(s)
    p = e / s
    return _op(out, (a,), lambda g: (g * p,))


# ----------------------------------------------------------------- similarity


def row_l2_normalize(a, floor: float = NORM_FLOOR) -> Tensor:
    a = as_tensor(a)
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    clamped = norms < floor
    _emit(a.tape, "zero_norm_row", clamped.sum())
    norms = np.where(clamped, floor, norms)
    y = a.value / norms

    def rule(g):
        radial = np.where(clamped, 0.0, (g * y).sum(axis=1, keepdims=True))
        return ((g - y * radial) / norms,)

    return _op(y, (a,), rule)


def cosine_similarity_matrix(u, v) -> Tensor:
    """``s_ij = <u_i, v_j> / (|u_i| |v_j|)``; zero rows have their norm clamped."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape[1] != v.shape[1]:
        raise ShapeError(f"cosine similarity: {u.shape} vs {v.shape}")
    return matmul(row_l2_normalize(u), transpose(row_l2_normalize(v)))


# ----------------------------------------------------------------- pair MLP


def _pair_block_forward(ua, vb, l2, b2):
    """Flattened (rows * n_v) x h activations of one anchor block.

    ``ua`` already carries the first-layer bias.
    """
    a1 = (ua[:, None, :] + vb[None, :, :]).reshape(-1, ua.shape[1])
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ l2
    a2 += b2
    h2 = np.maximum(a2, 0.0)
    return a1, h1, a2, h2


def default_block_rows(n: int, width: int) -> int:
    # keep each (rows x n x width) temporary near 16 MB
    return max(1, min(n, (1 << 21) // max(1, n * width)))


def pair_mlp(u, v, l1, b1, l2, b2, l3, b3, block_rows: Optional[int] = None) -> Tensor:
    """Scores ``MLP([u_i, v_j])`` for all ordered pairs as an n_u x n_v matrix.

    Two ReLU hidden layers and a linear scalar output. The first layer on the
    concatenation is split as ``u_i L1[:d] + v_j L1[d:]``. Pairs are processed
    ``block_rows`` anchors at a time in both passes; backward recomputes the
    block activations instead of storing them, so peak memory is one block.
    """
    u, v, l1, b1, l2, b2, l3, b3 = map(as_tensor, (u, v, l1, b1, l2, b2, l3, b3))
    nu, d = u.shape
    nv = v.shape[0]
    h = l1.shape[1]
    if v.shape[1] != d or l1.shape[0] != 2 * d:
        raise ShapeError(f"pair_mlp: u {u.shape}, v {v.shape}, L1 {l1.shape}")
    if l2.shape[0] != h or b1.shape != (1, h) or b2.shape != (1, l2.shape[1]):
        raise ShapeError("pair_mlp: hidden layer shapes disagree")
    h2w = l2.shape[1]
    if l3.shape != (h2w, 1) or b3.shape != (1, 1):
        raise ShapeError("pair_mlp: output layer must be (h, 1) with a (1, 1) bias")
    B = block_rows or default_block_rows(nv, max(h, h2w))

    L1a, L1b = l1.value[:d], l1.value[d:]
    UA = u.value @ L1a
    VB = v.value @ L1b
    UAb = UA + b1.value
    w3 = l3.value[:, 0]
    out = np.empty((nu, nv))
    for r0 in range(0, nu, B):
        r1 = min(nu, r0 + B)
        _, _, _, h2 = _pair_block_forward(UAb[r0:r1], VB, l2.value, b2.value)
        out[r0:r1] = (h2 @ w3).reshape(r1 - r0, nv) + b3.value[0, 0]

    def rule(g):
        dUA = np.zeros_like(UA)
        dVB = np.zeros_like(VB)
        dl2 = np.zeros_like(l2.value)
        db1 = np.zeros((1, h))
        db2 = np.zeros((1, h2w))
        dw3 = np.zeros(h2w)
        for r0 in range(0, nu, B):
            r1 = min(nu, r0 + B)
            a1, h1, a2, h2 = _pair_block_forward(UAb[r0:r1], VB, l2.value, b2.value)
            gb = g[r0:r1].reshape(-1)
            dw3 += gb @ h2
            da2 = np.multiply.outer(gb, w3)
            da2 *= a2 > 0
            dl2 += h1.T @ da2
            db2 += da2.sum(axis=0, keepdims=True)
            da1 = da2 @ l2.value.T
            da1 *= a1 > 0
            db1 += da1.sum(axis=0, keepdims=True)
            da1 = da1.reshape(r1 - r0, nv, h)
            dUA[r0:r1] = da1.sum(axis=1)
            dVB += da1.sum(axis=0)
        du = dUA @ L1a.T
        dv = dVB @ L1b.T
        dl1 = np.vstack([u.value.T @ dUA, v.value.T @ dVB])
        db3 = np.array([[g.sum()]])
        return du, dv, dl1, db1, dl2, db2, dw3[:, None], db3

    return _op(out, (u, v, l1, b1, l2, b2, l3, b3), rule)
