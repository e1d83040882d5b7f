"""Multi-range gated sequence encoders.

The gate construction contracts the input at several ranges (summing every r
consecutive tokens), transforms each contracted token, expands back to the
original length by block repetition, and fuses the per-range views with a
two-layer relu network. Gates blend the input with a position-wise candidate,
either directly (simple variant, no recurrence) or through a gated
accumulator cell whose sequential loop is elementwise only (recurrent
variant): every matrix product is hoisted out of the loop.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ops import (add, add_bias, block_repeat, concat_last, gather_rows, matmul, mul,
                  pad_rows, record_op, relu, segment_sum, sigmoid, slice_rows, sub, tanh)
from .tensor import MaskError, ParameterStore, Rng, ShapeError, Tensor


class RangeSetWarning(UserWarning):
    """Emitted when a range set omits 1 (gate rows can then repeat)."""


@dataclass(frozen=True)
class RangeSet:
    """Ascending distinct positive contraction ranges."""

    ranges: tuple[int, ...]

    def __post_init__(self):
        rs = tuple(int(r) for r in self.ranges)
        if not rs:
            raise ValueError("RangeSet must be non-empty")
        if any(r < 1 for r in rs):
            raise ValueError(f"ranges must be positive integers: {rs}")
        if any(b <= a for a, b in zip(rs, rs[1:])):
            raise ValueError(f"ranges must be ascending and distinct: {rs}")
        object.__setattr__(self, "ranges", rs)
        if 1 not in rs:
            warnings.warn(
                f"range set {rs} omits 1: positions inside a block share identical "
                "gate rows", RangeSetWarning, stacklevel=3)

    def __len__(self):
        return len(self.ranges)

    def __iter__(self):
        return iter(self.ranges)


@dataclass
class MruConfig:
    variant: str = "recurrent"  # "simple" | "recurrent"
    ranges: RangeSet = field(default_factory=lambda: RangeSet((1, 2, 4, 10, 25)))
    bidirectional: bool = False
    bias_inside: bool = False
    raw_output_gate: bool = False

    def __post_init__(self):
        if self.variant not in ("simple", "recurrent"):
            raise ValueError(f"unknown MRU variant {self.variant!r}")
        if not isinstance(self.ranges, RangeSet):
            self.ranges = RangeSet(tuple(self.ranges))


@dataclass
class MruParams:
    """Per-range contraction transforms plus fusion, candidate and output
    projections. Contraction weights are not shared across ranges."""

    contract_w: list[Tensor]
    contract_b: list[Tensor]
    fuse_w1: Tensor  # (k*d, d)
    fuse_b1: Tensor
    fuse_w2: Tensor  # (d, d)
    fuse_b2: Tensor
    proj_w: Tensor  # candidate transform (d, d)
    proj_b: Tensor
    out_w: Tensor | None = None  # output gate (recurrent variant only)
    out_b: Tensor | None = None

    @property
    def dim(self) -> int:
        return self.proj_w.shape[0]


def init_mru_params(store: ParameterStore, rng: Rng, prefix: str, dim: int,
                    ranges: RangeSet, recurrent: bool) -> MruParams:
    dt = store.dtype
    k = len(ranges)
    cw, cb = [], []
    for j, r in enumerate(ranges):
        cw.append(store.add(f"{prefix}/contract{j}_r{r}/w", rng.glorot(dim, dim, dtype=dt)))
        cb.append(store.add(f"{prefix}/contract{j}_r{r}/b", np.zeros(dim, dtype=dt)))
    p = MruParams(
        contract_w=cw,
        contract_b=cb,
        fuse_w1=store.add(f"{prefix}/fuse1/w", rng.glorot(k * dim, dim, dtype=dt)),
        fuse_b1=store.add(f"{prefix}/fuse1/b", np.zeros(dim, dtype=dt)),
        fuse_w2=store.add(f"{prefix}/fuse2/w", rng.glorot(dim, dim, dtype=dt)),
        fuse_b2=store.add(f"{prefix}/fuse2/b", np.zeros(dim, dtype=dt)),
        proj_w=store.add(f"{prefix}/cand/w", rng.glorot(dim, dim, dtype=dt)),
        proj_b=store.add(f"{prefix}/cand/b", np.zeros(dim, dtype=dt)),
    )
    if recurrent:
        p.out_w = store.add(f"{prefix}/outgate/w", rng.glorot(dim, dim, dtype=dt))
        p.out_b = store.add(f"{prefix}/outgate/b", np.zeros(dim, dtype=dt))
    return p


def _contract_transform(seq: Tensor, r_eff: int, w: Tensor, b: Tensor,
                        bias_inside: bool) -> Tensor:
    s = segment_sum(seq, r_eff)
    t = matmul(s, w)
    if bias_inside:
        return relu(add_bias(t, b))
    return add_bias(relu(t), b)


def contract_expand(seq: Tensor, r: int, w: Tensor, b: Tensor,
                    bias_inside: bool = False) -> Tensor:
    """Contract by r (clamped to the sequence length), transform each block
    token, and expand back to the input length by block repetition."""
    ell = seq.shape[0]
    if ell == 0:
        raise ShapeError("contract_expand on an empty sequence")
    r_eff = min(int(r), ell)
    h = _contract_transform(seq, r_eff, w, b, bias_inside)
    return block_repeat(h, r_eff, ell)


def fuse_gates(expanded: list[Tensor], params: MruParams) -> Tensor:
    """Two relu layers over the concatenated per-range views; returns gate
    pre-activations whose rows are constant across positions that share every
    block index."""
    if len(expanded) != len(params.contract_w):
        raise ShapeError(
            f"fuse_gates: {len(expanded)} range views for {len(params.contract_w)} ranges")
    cat = concat_last(expanded)
    h = relu(add_bias(matmul(cat, params.fuse_w1), params.fuse_b1))
    return relu(add_bias(matmul(h, params.fuse_w2), params.fuse_b2))


def multi_range_gates(seq: Tensor, params: MruParams, ranges: RangeSet,
                      bias_inside: bool = False) -> Tensor:
    """Gate pre-activations for a sequence.

    Equivalent to ``fuse_gates([contract_expand(seq, r, ...) for r in ranges])``
    but applies each F1 row block on the contracted sequence before expansion
    (block_repeat commutes with right matmul), which avoids forming the
    (ell x k*d) concatenation. Equality is covered by tests.
    """
    ell = seq.shape[0]
    if ell == 0:
        raise ShapeError("multi_range_gates on an empty sequence")
    d = params.dim
    acc = None
    for j, r in enumerate(ranges):
        r_eff = min(int(r), ell)
        h = _contract_transform(seq, r_eff, params.contract_w[j],
                                params.contract_b[j], bias_inside)
        w1j = slice_rows(params.fuse_w1, j * d, (j + 1) * d)
        part = block_repeat(matmul(h, w1j), r_eff, ell)
        acc = part if acc is None else add(acc, part)
    h1 = relu(add_bias(acc, params.fuse_b1))
    return relu(add_bias(matmul(h1, params.fuse_w2), params.fuse_b2))


def _candidate(seq: Tensor, params: MruParams, bias_inside: bool) -> Tensor:
    t = matmul(seq, params.proj_w)
    if bias_inside:
        return tanh(add_bias(t, params.proj_b))
    return add_bias(tanh(t), params.proj_b)


def simple_mru(seq: Tensor, params: MruParams, ranges: RangeSet,
               bias_inside: bool = False) -> Tensor:
    """Position-wise gated blend: y = sigma(g) * w + (1 - sigma(g)) * z."""
    g = multi_range_gates(seq, params, ranges, bias_inside)
    gs = sigmoid(g)
    z = _candidate(seq, params, bias_inside)
    return add(mul(gs, seq), mul(sub(1.0, gs), z))


def mru_cell_scan(gate_sig: Tensor, z: Tensor, c0: np.ndarray) -> Tensor:
    """Gated accumulator c_t = g_t*c_{t-1} + (1-g_t)*z_t as one tape node.

    Forward and backward both run in the selected scan kernel backend; the
    loop performs no matrix products (O(d) elementwise work per step).
    """
    if gate_sig.shape != z.shape:
        raise ShapeError(f"mru_cell_scan: gate shape {gate_sig.shape} != z shape {z.shape}")
    gd, zd = gate_sig.data, z.data
    c = kernels.mru_scan_forward(gd, zd, c0)

    def bwd(dc):
        dg, dz, _dc0 = kernels.mru_scan_backward(gd, zd, c0, c, dc)
        return dg, dz

    return record_op("mru_cell_scan", (gate_sig, z), c, bwd)


def recurrent_mru(seq: Tensor, params: MruParams, ranges: RangeSet,
                  bias_inside: bool = False, raw_output_gate: bool = False,
                  c0: np.ndarray | None = None) -> Tensor:
    """Gated accumulator over the sequence with an output gate:
    c_t = sig(g_t)*c_{t-1} + (1-sig(g_t))*z_t, h_t = o_t * c_t."""
    if params.out_w is None:
        raise ValueError("recurrent_mru needs params initialized with recurrent=True")
    g = multi_range_gates(seq, params, ranges, bias_inside)
    gs = sigmoid(g)
    z = _candidate(seq, params, bias_inside)
    if c0 is None:
        c0 = np.zeros(params.dim, dtype=seq.data.dtype)
    c = mru_cell_scan(gs, z, c0)
    o = add_bias(matmul(seq, params.out_w), params.out_b)
    if not raw_output_gate:
        o = sigmoid(o)
    return mul(o, c)


def valid_length(mask, ell: int) -> int:
    """Length of the valid prefix; masks must be contiguous 1s then 0s."""
    if mask is None:
        return ell
    m = np.asarray(mask)
    if m.shape != (ell,):
        raise MaskError(f"mask shape {m.shape} does not match sequence length {ell}")
    mb = m.astype(bool)
    n = int(mb.sum())
    if not mb[:n].all():
        raise MaskError("mask must be a contiguous prefix of valid positions")
    return n


def _reverse(seq: Tensor) -> Tensor:
    n = seq.shape[0]
    return gather_rows(seq, np.arange(n - 1, -1, -1))


def mru_encode(seq: Tensor, mask, params: MruParams, config: MruConfig,
               backward_params: MruParams | None = None) -> Tensor:
    """Encode a (possibly padded) sequence; padded positions yield zero rows.

    The simple variant is position-wise and ignores direction. The recurrent
    variant honors ``config.bidirectional`` (reversed valid prefix through a
    second pass, concatenated feature-wise), using ``backward_params`` for the
    reverse direction when provided and sharing ``params`` otherwise.
    """
    ell = seq.shape[0]
    n = valid_length(mask, ell)
    if n == 0:
        raise MaskError("mru_encode: no valid positions")
    core = seq if n == ell else slice_rows(seq, 0, n)
    if config.variant == "simple":
        out = simple_mru(core, params, config.ranges, config.bias_inside)
    else:
        out = recurrent_mru(core, params, config.ranges, config.bias_inside,
                            config.raw_output_gate)
        if config.bidirectional:
            bp = backward_params if backward_params is not None else params
            rev = recurrent_mru(_reverse(core), bp, config.ranges,
                                config.bias_inside, config.raw_output_gate)
            out = concat_last([out, _reverse(rev)])
    if n != ell:
        out = pad_rows(out, ell)
    return out


class MruEncoder:
    """Callable encoder wrapper owning its parameters."""

    def __init__(self, store: ParameterStore, rng: Rng, prefix: str, dim: int,
                 config: MruConfig):
        self.config = config
        self.dim = dim
        recurrent = config.variant == "recurrent"
        self.params = init_mru_params(store, rng, prefix, dim, config.ranges, recurrent)
        self.backward_params = None
        if recurrent and config.bidirectional:
            self.backward_params = init_mru_params(
                store, rng, prefix + "/rev", dim, config.ranges, recurrent)
        self.out_dim = dim * (2 if recurrent and config.bidirectional else 1)

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        return mru_encode(seq, mask, self.params, self.config, self.backward_params)
