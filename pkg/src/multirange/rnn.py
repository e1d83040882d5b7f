"""Baseline recurrent encoders (LSTM, GRU), direction/stack wrappers, and the
encoder registry used by the model harness.

Input-side projections for a whole sequence are computed as one matrix
product outside the time loop; the loop itself (inside the scan kernels) does
one hidden-to-hidden product per step for LSTM/GRU. Recurrent-weight
gradients are likewise accumulated with a single matmul over all steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .mru import MruConfig, MruEncoder, RangeSet, _reverse, valid_length
from .ops import add_bias, concat_last, matmul, pad_rows, record_op, slice_rows
from .tensor import MaskError, ParameterStore, Rng, ShapeError, Tensor


@dataclass
class RnnParams:
    kind: str  # "lstm" | "gru"
    w_x: Tensor  # (d_in, G*h)
    w_h: Tensor  # (h, G*h)
    b: Tensor  # (G*h,)
    hidden: int


def init_lstm_params(store: ParameterStore, rng: Rng, prefix: str,
                     d_in: int, hidden: int) -> RnnParams:
    dt = store.dtype
    b = np.zeros(4 * hidden, dtype=dt)
    b[hidden:2 * hidden] = 1.0  # forget gate bias starts open
    return RnnParams(
        kind="lstm",
        w_x=store.add(f"{prefix}/w_x", rng.glorot(d_in, 4 * hidden, dtype=dt)),
        w_h=store.add(f"{prefix}/w_h", rng.glorot(hidden, 4 * hidden, dtype=dt)),
        b=store.add(f"{prefix}/b", b),
        hidden=hidden,
    )


def init_gru_params(store: ParameterStore, rng: Rng, prefix: str,
                    d_in: int, hidden: int) -> RnnParams:
    dt = store.dtype
    return RnnParams(
        kind="gru",
        w_x=store.add(f"{prefix}/w_x", rng.glorot(d_in, 3 * hidden, dtype=dt)),
        w_h=store.add(f"{prefix}/w_h", rng.glorot(hidden, 3 * hidden, dtype=dt)),
        b=store.add(f"{prefix}/b", np.zeros(3 * hidden, dtype=dt)),
        hidden=hidden,
    )


def _lstm_scan(xp: Tensor, w_h: Tensor, h0: np.ndarray, c0: np.ndarray) -> Tensor:
    hs, cs, gates = kernels.lstm_scan_forward(xp.data, w_h.data, h0, c0)
    w_hd = w_h.data

    def bwd(dh):
        da, _dh0, _dc0 = kernels.lstm_scan_backward(w_hd, h0, c0, cs, gates, dh)
        h_prev = np.vstack([h0[None, :], hs[:-1]])
        dw_h = h_prev.T @ da  # hoisted: one matmul for all steps
        return da, dw_h

    return record_op("lstm_scan", (xp, w_h), hs, bwd)


def _gru_scan(xp: Tensor, w_h: Tensor, h0: np.ndarray) -> Tensor:
    hs, saved = kernels.gru_scan_forward(xp.data, w_h.data, h0)
    w_hd = w_h.data

    def bwd(dh):
        dxp, dhp, _dh0 = kernels.gru_scan_backward(w_hd, h0, saved, hs, dh)
        h_prev = np.vstack([h0[None, :], hs[:-1]])
        dw_h = h_prev.T @ dhp
        return dxp, dw_h

    return record_op("gru_scan", (xp, w_h), hs, bwd)


def _run_rnn(core: Tensor, params: RnnParams, h0, c0) -> Tensor:
    h = params.hidden
    dt = core.data.dtype
    h0 = np.zeros(h, dtype=dt) if h0 is None else np.asarray(h0, dtype=dt)
    if h0.shape != (h,):
        raise ShapeError(f"h0 shape {h0.shape}, expected ({h},)")
    xp = add_bias(matmul(core, params.w_x), params.b)
    if params.kind == "lstm":
        c0 = np.zeros(h, dtype=dt) if c0 is None else np.asarray(c0, dtype=dt)
        if c0.shape != (h,):
            raise ShapeError(f"c0 shape {c0.shape}, expected ({h},)")
        return _lstm_scan(xp, params.w_h, h0, c0)
    return _gru_scan(xp, params.w_h, h0)


def lstm_forward(seq: Tensor, mask, params: RnnParams, h0=None, c0=None) -> Tensor:
    """LSTM over the valid prefix; padded positions emit zero rows."""
    if params.kind != "lstm":
        raise ValueError(f"lstm_forward given {params.kind} params")
    return _masked_rnn(seq, mask, params, h0, c0)


def gru_forward(seq: Tensor, mask, params: RnnParams, h0=None) -> Tensor:
    """GRU (reset gate applied to the projected previous state); padded
    positions emit zero rows."""
    if params.kind != "gru":
        raise ValueError(f"gru_forward given {params.kind} params")
    return _masked_rnn(seq, mask, params, h0, None)


def _masked_rnn(seq: Tensor, mask, params: RnnParams, h0, c0) -> Tensor:
    ell = seq.shape[0]
    n = valid_length(mask, ell)
    if n == 0:
        raise MaskError("rnn encoder: no valid positions")
    core = seq if n == ell else slice_rows(seq, 0, n)
    out = _run_rnn(core, params, h0, c0)
    if n != ell:
        out = pad_rows(out, ell)
    return out


def bidirectional(encoder, seq: Tensor, mask=None, backward_encoder=None) -> Tensor:
    """Run an encoder over the valid prefix forwards and reversed, concatenate
    feature-wise, and re-pad. Shares weights unless a backward encoder is given."""
    ell = seq.shape[0]
    n = valid_length(mask, ell)
    if n == 0:
        raise MaskError("bidirectional: no valid positions")
    core = seq if n == ell else slice_rows(seq, 0, n)
    fwd = encoder(core, None)
    benc = backward_encoder if backward_encoder is not None else encoder
    bwd = _reverse(benc(_reverse(core), None))
    out = concat_last([fwd, bwd])
    if n != ell:
        out = pad_rows(out, ell)
    return out


def identity_encoder(seq: Tensor, mask=None) -> Tensor:
    return seq


class IdentityEncoder:
    def __init__(self, dim: int):
        self.out_dim = dim

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        return identity_encoder(seq, mask)


class LstmEncoder:
    def __init__(self, store: ParameterStore, rng: Rng, prefix: str,
                 d_in: int, hidden: int):
        self.params = init_lstm_params(store, rng, prefix, d_in, hidden)
        self.out_dim = hidden

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        return lstm_forward(seq, mask, self.params)


class GruEncoder:
    def __init__(self, store: ParameterStore, rng: Rng, prefix: str,
                 d_in: int, hidden: int):
        self.params = init_gru_params(store, rng, prefix, d_in, hidden)
        self.out_dim = hidden

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        return gru_forward(seq, mask, self.params)


class BidirEncoder:
    def __init__(self, forward_encoder, backward_encoder):
        self.fwd = forward_encoder
        self.bwd = backward_encoder
        self.out_dim = forward_encoder.out_dim + backward_encoder.out_dim

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        return bidirectional(self.fwd, seq, mask, self.bwd)


@dataclass
class EncoderStack:
    """Encoders applied in sequence; each layer consumes the previous output."""

    layers: list

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, seq: Tensor, mask=None) -> Tensor:
        out = seq
        for layer in self.layers:
            out = layer(out, mask)
        return out


def hybrid_mru_lstm(seq: Tensor, mask, stack: EncoderStack) -> Tensor:
    """Bidirectional-LSTM features refined by a recurrent multi-range layer."""
    return stack(seq, mask)


ENCODER_KINDS = ("none", "lstm", "gru", "bilstm", "simple_mru", "mru", "mru_lstm")


def make_encoder(store: ParameterStore, rng: Rng, prefix: str, kind: str,
                 in_dim: int, width: int = 0, mru_config: MruConfig | None = None):
    """Build a named encoder. ``width`` is the hidden size for recurrent
    baselines (0 means in_dim; per direction for bilstm, in_dim//2 for the
    hybrid's first stage). Multi-range encoders keep the input width."""
    if kind not in ENCODER_KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
    if kind == "none":
        return IdentityEncoder(in_dim)
    if kind == "lstm":
        return LstmEncoder(store, rng, prefix, in_dim, width or in_dim)
    if kind == "gru":
        return GruEncoder(store, rng, prefix, in_dim, width or in_dim)
    if kind == "bilstm":
        h = width or in_dim
        return BidirEncoder(LstmEncoder(store, rng, prefix + "/f", in_dim, h),
                            LstmEncoder(store, rng, prefix + "/b", in_dim, h))
    cfg = mru_config if mru_config is not None else MruConfig()
    if kind == "simple_mru":
        cfg = MruConfig("simple", cfg.ranges, False, cfg.bias_inside, cfg.raw_output_gate)
        return MruEncoder(store, rng, prefix, in_dim, cfg)
    if kind == "mru":
        cfg = MruConfig("recurrent", cfg.ranges, cfg.bidirectional,
                        cfg.bias_inside, cfg.raw_output_gate)
        return MruEncoder(store, rng, prefix, in_dim, cfg)
    # mru_lstm: bilstm stage sized to reproduce in_dim, then a recurrent MRU
    h = width or in_dim // 2
    if h < 1:
        raise ValueError(f"mru_lstm needs in_dim >= 2, got {in_dim}")
    base = BidirEncoder(LstmEncoder(store, rng, prefix + "/lstm/f", in_dim, h),
                        LstmEncoder(store, rng, prefix + "/lstm/b", in_dim, h))
    top_cfg = MruConfig("recurrent", cfg.ranges, False, cfg.bias_inside,
                        cfg.raw_output_gate)
    top = MruEncoder(store, rng, prefix + "/mru", base.out_dim, top_cfg)
    return EncoderStack([base, top])


def make_range_set(ranges) -> RangeSet:
    return ranges if isinstance(ranges, RangeSet) else RangeSet(tuple(ranges))
