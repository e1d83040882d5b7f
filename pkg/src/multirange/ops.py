"""Differentiable operations over Tensors.

Ops consult the thread-local active Tape; with no tape active they run
forward-only. Tensor/tensor binary ops require identical shapes; the only
broadcast form offered is ``add_bias`` (row-vector bias added to each row of a
matrix). Python scalars and raw ndarrays are accepted as non-differentiable
constants.
"""

from __future__ import annotations

import numpy as np

from .tensor import MaskError, ShapeError, Tensor, active_tape


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64 if dtype is None else dtype)
    return Tensor(arr)


def constant(x, dtype=None) -> Tensor:
    return as_tensor(x, dtype)


def _record(op, parents, out, bwd) -> Tensor:
    tape = active_tape()
    if tape is None:
        return Tensor(out)
    return tape.record(op, parents, out, bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    tape = active_tape()
    if tape is None:
        return Tensor(out)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return tape.record("matmul", (a, b), out, bwd)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {x.shape}")
    return _record("transpose", (x,), x.data.T, lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    out = x.data.reshape(shape)
    return _record("reshape", (x,), out, lambda g: (g.reshape(orig),))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias row to every row of an (n x d) matrix."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias expects (n,d) + (d,), got {x.shape} + {b.shape}")
    out = x.data + b.data
    return _record("add_bias", (x, b), out, lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _const_operand(other, ref: Tensor):
    """Normalize the non-Tensor side of a binary op to scalar or same-shape array."""
    if np.isscalar(other):
        return ref.data.dtype.type(other)
    arr = np.asarray(other)
    if arr.shape != ref.shape:
        raise ShapeError(f"constant operand shape {arr.shape} != tensor shape {ref.shape}")
    return arr.astype(ref.data.dtype, copy=False)


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_pair(a, b, "add")
        return _record("add", (a, b), a.data + b.data, lambda g: (g, g))
    if isinstance(b, Tensor):
        a, b = b, a
    c = _const_operand(b, a)
    return _record("add", (a,), a.data + c, lambda g: (g,))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_pair(a, b, "sub")
        return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))
    if isinstance(a, Tensor):
        c = _const_operand(b, a)
        return _record("sub", (a,), a.data - c, lambda g: (g,))
    c = _const_operand(a, b)
    return _record("sub", (b,), c - b.data, lambda g: (-g,))


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_pair(a, b, "mul")
        ad, bd = a.data, b.data
        return _record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))
    if isinstance(b, Tensor):
        a, b = b, a
    c = _const_operand(b, a)
    return _record("mul", (a,), a.data * c, lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    # Gradient at exactly 0 is defined as 0 (strict > mask).
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))
    return _record("relu", (x,), out, lambda g: (g * mask,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul,
                "sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(kind: str, *args) -> Tensor:
    if kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise kind {kind!r}; have {sorted(_ELEMENTWISE)}")
    return _ELEMENTWISE[kind](*args)


# ---------------------------------------------------------------------------
# softmax / losses
# ---------------------------------------------------------------------------

def _mask_for(x_shape, mask) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask)
    if m.shape == x_shape:
        return m.astype(bool)
    if len(x_shape) == 2 and m.ndim == 1 and m.shape[0] == x_shape[-1]:
        return np.broadcast_to(m.astype(bool), x_shape)
    raise ShapeError(f"mask shape {m.shape} incompatible with {x_shape}")


def softmax(x: Tensor, mask=None) -> Tensor:
    """Row softmax over the last axis with max-subtraction; masked positions
    are exactly zero. A fully masked row is an error."""
    xd = x.data
    mb = _mask_for(xd.shape, mask)
    if mb is None:
        m = xd.max(axis=-1, keepdims=True)
        e = np.exp(xd - m)
    else:
        if not mb.any(axis=-1).all():
            raise MaskError("softmax: fully masked row")
        neg = np.finfo(xd.dtype).min
        m = np.where(mb, xd, neg).max(axis=-1, keepdims=True)
        e = np.exp(np.where(mb, xd - m, xd.dtype.type(0))) * mb
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (x,), out, bwd)


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean cross entropy of integer labels under row-softmax of logits."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy needs (b,K) logits, got {logits.shape}")
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = logits.shape
    if lab.shape[0] != b:
        raise ShapeError(f"labels length {lab.shape[0]} != batch {b}")
    if (lab < 0).any() or (lab >= k).any():
        raise ValueError(f"label out of range [0,{k}): {lab.tolist()}")
    xd = logits.data
    mb = _mask_for(xd.shape, mask)
    if mb is None:
        mb = np.ones_like(xd, dtype=bool)
    if not mb.any(axis=-1).all():
        raise MaskError("softmax_cross_entropy: fully masked row")
    if not mb[np.arange(b), lab].all():
        raise MaskError("softmax_cross_entropy: gold label at masked position")
    neg = np.finfo(xd.dtype).min
    m = np.where(mb, xd, neg).max(axis=-1, keepdims=True)
    e = np.exp(np.where(mb, xd - m, xd.dtype.type(0))) * mb
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    lse = np.log(s).reshape(-1) + m.reshape(-1)
    loss = (lse - xd[np.arange(b), lab]).mean(dtype=xd.dtype)
    out = np.asarray(loss, dtype=xd.dtype)

    def bwd(g):
        d = p.copy()
        d[np.arange(b), lab] -= 1.0
        return (d * (g / b),)

    return _record("softmax_cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# block structure
# ---------------------------------------------------------------------------

def segment_sum(x: Tensor, r: int) -> Tensor:
    """Sum every r consecutive rows; a short tail block is zero-padded."""
    if x.ndim != 2:
        raise ShapeError(f"segment_sum needs a 2-D tensor, got {x.shape}")
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValueError(f"segment_sum: range must be a positive integer, got {r!r}")
    ell, d = x.shape
    m = -(-ell // r)
    xd = x.data
    if m * r != ell:
        pad = np.zeros((m * r - ell, d), dtype=xd.dtype)
        xd = np.concatenate([xd, pad], axis=0)
    out = xd.reshape(m, r, d).sum(axis=1)

    def bwd(g):
        return (np.repeat(g, r, axis=0)[:ell],)

    return _record("segment_sum", (x,), out, bwd)


def block_repeat(x: Tensor, r: int, ell: int) -> Tensor:
    """Repeat each row r times and trim to length ell (inverse map of
    segment_sum's block structure; their gradients are each other)."""
    if x.ndim != 2:
        raise ShapeError(f"block_repeat needs a 2-D tensor, got {x.shape}")
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValueError(f"block_repeat: range must be a positive integer, got {r!r}")
    m, d = x.shape
    if m != -(-ell // r):
        raise ShapeError(f"block_repeat: {m} blocks inconsistent with ell={ell}, r={r}")
    out = np.repeat(x.data, r, axis=0)[:ell]

    def bwd(g):
        if m * r != ell:
            pad = np.zeros((m * r - ell, d), dtype=g.dtype)
            g = np.concatenate([g, pad], axis=0)
        return (g.reshape(m, r, d).sum(axis=1),)

    return _record("block_repeat", (x,), out, bwd)


# ---------------------------------------------------------------------------
# shape assembly
# ---------------------------------------------------------------------------

def concat(xs, axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of empty list")
    nd = xs[0].ndim
    ax = axis if axis >= 0 else nd + axis
    if any(t.ndim != nd for t in xs):
        raise ShapeError(f"concat: mixed ranks {[t.shape for t in xs]}")
    for other_ax in range(nd):
        if other_ax == ax:
            continue
        dims = {t.shape[other_ax] for t in xs}
        if len(dims) > 1:
            raise ShapeError(f"concat: off-axis dims differ: {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=ax)
    sizes = [t.shape[ax] for t in xs]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=ax))

    return _record("concat", tuple(xs), out, bwd)


def concat_last(xs) -> Tensor:
    return concat(xs, axis=-1)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"slice_rows needs a 2-D tensor, got {x.shape}")
    n = x.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_rows [{start}:{stop}] out of bounds for {x.shape}")
    out = x.data[start:stop]
    shape = x.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _record("slice_rows", (x,), out, bwd)


def pad_rows(x: Tensor, total: int) -> Tensor:
    """Append zero rows up to a total row count."""
    if x.ndim != 2:
        raise ShapeError(f"pad_rows needs a 2-D tensor, got {x.shape}")
    n = x.shape[0]
    if total < n:
        raise ShapeError(f"pad_rows: total {total} < current rows {n}")
    if total == n:
        return _record("pad_rows", (x,), x.data, lambda g: (g,))
    out = np.zeros((total, x.shape[1]), dtype=x.data.dtype)
    out[:n] = x.data
    return _record("pad_rows", (x,), out, lambda g: (g[:n],))


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows by index (duplicates allowed); gradient scatter-adds."""
    if x.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if idx.size and ((idx < 0).any() or (idx >= n).any()):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")
    out = x.data[idx]
    shape = x.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record("gather_rows", (x,), out, bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _row_mask(x: Tensor, mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 1 or m.shape[0] != x.shape[0]:
        raise ShapeError(f"row mask shape {m.shape} incompatible with {x.shape}")
    return m.astype(x.data.dtype)


def reduce_sum(x: Tensor, axis=None, mask=None) -> Tensor:
    xd = x.data
    if mask is not None:
        if axis != 0 or x.ndim != 2:
            raise ShapeError("masked reduce is defined over rows (axis=0) of a 2-D tensor")
        mf = _row_mask(x, mask)
        out = (xd * mf[:, None]).sum(axis=0)
        return _record("reduce_sum", (x,), out, lambda g: (g[None, :] * mf[:, None],))
    out = xd.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, xd.shape).astype(xd.dtype, copy=True),)
        return (np.expand_dims(g, axis).repeat(xd.shape[axis], axis=axis),)

    return _record("reduce_sum", (x,), np.asarray(out, dtype=xd.dtype), bwd)


def reduce_mean(x: Tensor, axis=None, mask=None) -> Tensor:
    xd = x.data
    if mask is not None:
        if axis != 0 or x.ndim != 2:
            raise ShapeError("masked reduce is defined over rows (axis=0) of a 2-D tensor")
        mf = _row_mask(x, mask)
        cnt = float(mf.sum())
        if cnt == 0:
            raise MaskError("reduce_mean: empty mask")
        out = (xd * mf[:, None]).sum(axis=0) / xd.dtype.type(cnt)
        return _record("reduce_mean", (x,), out,
                       lambda g: (g[None, :] * mf[:, None] / xd.dtype.type(cnt),))
    n = xd.size if axis is None else xd.shape[axis]
    if n == 0:
        raise MaskError("reduce_mean over an empty axis")
    out = xd.mean(axis=axis, dtype=xd.dtype)

    def bwd(g):
        if axis is None:
            return ((np.broadcast_to(g, xd.shape) / xd.dtype.type(n)).astype(xd.dtype, copy=True),)
        return (np.expand_dims(g, axis).repeat(n, axis=axis) / xd.dtype.type(n),)

    return _record("reduce_mean", (x,), np.asarray(out, dtype=xd.dtype), bwd)


def reduce(kind: str, x: Tensor, axis=None, mask=None) -> Tensor:
    if kind == "sum":
        return reduce_sum(x, axis=axis, mask=mask)
    if kind == "mean":
        return reduce_mean(x, axis=axis, mask=mask)
    raise ValueError(f"unknown reduce kind {kind!r}; have ['mean', 'sum']")


# ---------------------------------------------------------------------------
# custom-op hook (used by the scan wrappers in mru/rnn)
# ---------------------------------------------------------------------------

def record_op(op: str, parents, out_data, backward_fn) -> Tensor:
    return _record(op, parents, out_data, backward_fn)


# Attach arithmetic dunders here to avoid tensor.py importing ops.
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__neg__ = lambda self: mul(self, -1.0)
