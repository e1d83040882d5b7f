"""Model building blocks: linear/highway layers, bi-attention between two
sequences, a position-blind pooled variant, span comparison functions, and
the binary/weighted lexical-overlap features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ops import (add, add_bias, block_repeat, concat_last, matmul, mul, reduce_mean,
                  relu, reshape, sigmoid, softmax, sub, transpose)
from .tensor import ParameterStore, Rng, ShapeError, Tensor


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor | None = None


def init_linear(store: ParameterStore, rng: Rng, prefix: str, d_in: int,
                d_out: int, bias: bool = True) -> LinearParams:
    dt = store.dtype
    w = store.add(f"{prefix}/w", rng.glorot(d_in, d_out, dtype=dt))
    b = store.add(f"{prefix}/b", np.zeros(d_out, dtype=dt)) if bias else None
    return LinearParams(w, b)


def linear(x: Tensor, params: LinearParams) -> Tensor:
    out = matmul(x, params.w)
    if params.b is not None:
        out = add_bias(out, params.b)
    return out


@dataclass
class HighwayParams:
    gate: LinearParams
    transform: LinearParams


def init_highway(store: ParameterStore, rng: Rng, prefix: str, dim: int) -> HighwayParams:
    return HighwayParams(
        gate=init_linear(store, rng, f"{prefix}/gate", dim, dim),
        transform=init_linear(store, rng, f"{prefix}/transform", dim, dim),
    )


def highway(x: Tensor, params: HighwayParams) -> Tensor:
    """y = sigma(gate(x)) * relu(transform(x)) + (1 - sigma(gate(x))) * x."""
    t = sigmoid(linear(x, params.gate))
    h = relu(linear(x, params.transform))
    return add(mul(t, h), mul(sub(1.0, t), x))


@dataclass
class BiAttnParams:
    f: LinearParams
    g: LinearParams
    m: Tensor  # (d, d) bilinear form between the two projected sequences


def init_bi_attention(store: ParameterStore, rng: Rng, prefix: str, dim: int) -> BiAttnParams:
    return BiAttnParams(
        f=init_linear(store, rng, f"{prefix}/f", dim, dim),
        g=init_linear(store, rng, f"{prefix}/g", dim, dim),
        m=store.add(f"{prefix}/m", rng.glorot(dim, dim, dtype=store.dtype)),
    )


def bi_attention(x: Tensor, y: Tensor, params: BiAttnParams,
                 x_mask=None, y_mask=None) -> tuple[Tensor, Tensor]:
    """Soft alignment in both directions.

    Affinity s_ij = relu(F(x_i)) . M . relu(G(y_j)). Returns (x_att, y_att):
    x_att[i] is the attention-weighted mean of y rows under softmax over j,
    and y_att[j] the weighted mean of x rows under softmax over i. Masks are
    per-sequence validity vectors applied to the softmax normalizations.
    """
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"bi_attention dims differ: {x.shape} vs {y.shape}")
    fx = relu(linear(x, params.f))
    gy = relu(linear(y, params.g))
    s = matmul(matmul(fx, params.m), transpose(gy))  # (lx, ly)
    a_xy = softmax(s, mask=y_mask)
    x_att = matmul(a_xy, y)
    a_yx = softmax(transpose(s), mask=x_mask)
    y_att = matmul(a_yx, x)
    return x_att, y_att


def pooled_attention(x: Tensor, y: Tensor, x_mask=None, y_mask=None) -> tuple[Tensor, Tensor]:
    """Position-blind stand-in for bi_attention: every x position attends to
    the masked mean of y and vice versa. Used as a word-order control."""
    lx, ly = x.shape[0], y.shape[0]
    y_mean = reshape(reduce_mean(y, axis=0, mask=y_mask), (1, y.shape[1]))
    x_mean = reshape(reduce_mean(x, axis=0, mask=x_mask), (1, x.shape[1]))
    x_att = block_repeat(y_mean, lx, lx)
    y_att = block_repeat(x_mean, ly, ly)
    return x_att, y_att


@dataclass
class CompareParams:
    mode: str  # "submultnn" | "mult"
    proj: LinearParams | None = None


def init_compare(store: ParameterStore, rng: Rng, prefix: str, dim: int,
                 mode: str) -> CompareParams:
    if mode not in ("submultnn", "mult"):
        raise ValueError(f"unknown compare mode {mode!r}")
    if mode == "mult":
        return CompareParams("mult")
    return CompareParams("submultnn", init_linear(store, rng, prefix, 2 * dim, dim))


def span_compare(aligned: Tensor, enc: Tensor, params: CompareParams) -> Tensor:
    """Fuse aligned-question and passage vectors per position.

    mult: elementwise product. submultnn: relu(W [ (x-y)*(x-y) ; x*y ] + b).
    """
    if params.mode == "mult":
        return mul(aligned, enc)
    diff = sub(aligned, enc)
    cat = concat_last([mul(diff, diff), mul(aligned, enc)])
    return relu(linear(cat, params.proj))


def em_features(tokens: list[str], other_tokens: list[str], dtype=np.float32) -> np.ndarray:
    """Binary column: token appears (case-insensitive) in the other sequence."""
    other = {t.lower() for t in other_tokens}
    col = np.fromiter((1.0 if t.lower() in other else 0.0 for t in tokens),
                      dtype=dtype, count=len(tokens))
    return col.reshape(-1, 1)


def _overlap_ratio(tokens: list[str], other: set, idf: dict[str, float] | None) -> float:
    num = den = 0.0
    for t in tokens:
        w = idf.get(t, 1.0) if idf else 1.0
        den += w
        if t in other:
            num += w
    return num / den if den > 0 else 0.0


def overlap_features(answer_tokens: list[str], other_tokens: list[str],
                     idf: dict[str, float] | None = None,
                     dtype=np.float32) -> np.ndarray:
    """Bidirectional lexical overlap ratios between a candidate answer and
    another sequence: [answer tokens found in other, other tokens found in
    answer, and the idf-weighted version of each]. Case-insensitive, counted
    with token multiplicity. Empty sequences yield zeros."""
    a = [t.lower() for t in answer_tokens]
    o = [t.lower() for t in other_tokens]
    a_set, o_set = set(a), set(o)
    return np.array([
        _overlap_ratio(a, o_set, None),
        _overlap_ratio(o, a_set, None),
        _overlap_ratio(a, o_set, idf),
        _overlap_ratio(o, a_set, idf),
    ], dtype=dtype)


def compute_idf(token_seqs: list[list[str]]) -> dict[str, float]:
    """Smoothed inverse document frequency over lowercased tokens."""
    n = len(token_seqs)
    df: dict[str, int] = {}
    for seq in token_seqs:
        for t in {tok.lower() for tok in seq}:
            df[t] = df.get(t, 0) + 1
    return {t: math.log((1.0 + n) / (1.0 + c)) + 1.0 for t, c in df.items()}
