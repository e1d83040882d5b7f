"""Bi-attentive readers for multiple-choice and span-extraction tasks.

Both heads share a stream pipeline: embedding lookup, optional binary
match columns, linear projection to the model width, a shared highway layer,
then a sequence encoder on the passage (and optionally the question). The
multiple-choice head scores each option from bidirectional attention pools
plus lexical overlap features; the span head aligns question to passage,
fuses with a comparison function, and points at start/end positions through
two stacked encoder layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingMatrix, McqInstance, SpanInstance, Vocab
from .layers import (bi_attention, em_features, highway,
                     init_bi_attention, init_compare, init_highway, init_linear, linear,
                     overlap_features, pooled_attention, span_compare)
from .mru import MruConfig, RangeSet
from .ops import (add, concat, concat_last, gather_rows, relu,
                  reduce_sum, reshape, softmax, softmax_cross_entropy)
from .optim import dropout
from .rnn import ENCODER_KINDS, make_encoder
from .tensor import ParameterStore, Rng, Tensor


@dataclass
class ModelConfig:
    task: str = "mcq"  # "mcq" | "span"
    dim: int = 128
    compare: str = "submultnn"  # span fusion: "submultnn" | "mult"
    max_span_len: int = 15
    biattention: str = "full"  # "full" | "pooled" (position-blind control)
    lexical_features: bool = True
    dropout: float = 0.0
    encoder_kind: str = "mru"
    encoder_width: int = 0
    pointer_kind: str = "auto"
    ranges: tuple[int, ...] = (1, 2, 4, 10, 25)
    bias_inside: bool = False
    raw_output_gate: bool = False
    apply_to_query: bool = False

    def __post_init__(self):
        if self.task not in ("mcq", "span"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.biattention not in ("full", "pooled"):
            raise ValueError(f"unknown biattention mode {self.biattention!r}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.max_span_len < 1:
            raise ValueError("max_span_len must be >= 1")


# pointer-layer encoder used when pointer_kind is "auto"
_AUTO_POINTER = {"none": "mru", "simple_mru": "simple_mru", "mru": "mru",
                 "mru_lstm": "bilstm", "lstm": "lstm", "gru": "gru",
                 "bilstm": "bilstm"}


def _encoder_width(kind: str, width: int, dim: int) -> int:
    """Resolve the hidden width so the encoder keeps the model dimension."""
    if width:
        return width
    if kind in ("bilstm", "mru_lstm"):
        if dim % 2:
            raise ValueError(f"{kind} needs an even model dim, got {dim}")
        return dim // 2
    return dim


class BiAttentiveModel:
    def __init__(self, store: ParameterStore, rng: Rng, config: ModelConfig,
                 emb: EmbeddingMatrix, vocab: Vocab,
                 idf: dict[str, float] | None = None):
        self.store = store
        self.config = config
        self.vocab = vocab
        self.idf = idf
        self.frozen_emb = emb.frozen
        self.emb = store.add("embed/table", emb.table, trainable=not emb.frozen)
        d_emb = emb.table.shape[1]
        d = config.dim
        lex = 1 if config.lexical_features else 0
        mru_cfg = MruConfig(
            "simple" if config.encoder_kind == "simple_mru" else "recurrent",
            RangeSet(tuple(config.ranges)), False, config.bias_inside,
            config.raw_output_gate)
        width = _encoder_width(config.encoder_kind, config.encoder_width, d)

        def enc(prefix):
            e = make_encoder(store, rng, prefix, config.encoder_kind, d, width, mru_cfg)
            if e.out_dim != d:
                raise ValueError(
                    f"encoder {config.encoder_kind!r} emits width {e.out_dim}, "
                    f"model needs {d}; adjust encoder width")
            return e

        self.highway = init_highway(store, rng, "highway", d)
        self.encoder = enc("encoder/p")
        self.encoder_q = enc("encoder/q") if config.apply_to_query else None

        if config.task == "mcq":
            self.proj_p = init_linear(store, rng, "proj/p", d_emb + 2 * lex, d)
            self.proj_q = init_linear(store, rng, "proj/q", d_emb + lex, d)
            self.proj_a = init_linear(store, rng, "proj/a", d_emb, d)
            if config.biattention == "full":
                self.attn_pq = init_bi_attention(store, rng, "attn/pq", d)
                self.attn_pa = init_bi_attention(store, rng, "attn/pa", d)
            self.head1 = init_linear(store, rng, "head/1", 2 * d + 8 * lex, d)
            self.head2 = init_linear(store, rng, "head/2", d, 1)
        else:
            self.proj_p = init_linear(store, rng, "proj/p", d_emb + lex, d)
            self.proj_q = init_linear(store, rng, "proj/q", d_emb + lex, d)
            if config.biattention == "full":
                self.attn_pq = init_bi_attention(store, rng, "attn/pq", d)
            self.compare = init_compare(store, rng, "compare", d, config.compare)
            pk = config.pointer_kind
            if pk == "auto":
                pk = _AUTO_POINTER[config.encoder_kind]
            pw = _encoder_width(pk, 0, d)
            pcfg = MruConfig("simple" if pk == "simple_mru" else "recurrent",
                             mru_cfg.ranges, False, config.bias_inside,
                             config.raw_output_gate)
            self.pointer1 = make_encoder(store, rng, "pointer/1", pk, d, pw, pcfg)
            self.pointer2 = make_encoder(store, rng, "pointer/2", pk,
                                         self.pointer1.out_dim, pw, pcfg)
            self.start_lin = init_linear(store, rng, "pointer/start",
                                         self.pointer1.out_dim, 1)
            self.end_lin = init_linear(store, rng, "pointer/end",
                                       self.pointer2.out_dim, 1)

    # -- shared stream pipeline -------------------------------------------

    def _lookup(self, tokens: list[str]) -> Tensor:
        ids = self.vocab.encode(tokens)
        if self.frozen_emb:
            return Tensor(self.emb.data[ids])
        return gather_rows(self.emb, ids)

    def _stream(self, tokens, proj, em_cols, training, rng) -> Tensor:
        x = self._lookup(tokens)
        x = dropout(x, self.config.dropout, rng, training)
        if em_cols:
            consts = [Tensor(c.astype(self.store.dtype, copy=False)) for c in em_cols]
            x = concat_last([x] + consts)
        x = linear(x, proj)
        x = highway(x, self.highway)
        return dropout(x, self.config.dropout, rng, training)

    def _attend(self, x, y, params):
        if self.config.biattention == "pooled":
            return pooled_attention(x, y)
        return bi_attention(x, y, params)

    # -- multiple choice ---------------------------------------------------

    def mcq_forward(self, inst: McqInstance, training: bool = False,
                    rng: Rng | None = None):
        """Returns (option probabilities, loss tensor or None)."""
        cfg = self.config
        if cfg.task != "mcq":
            raise ValueError("mcq_forward on a span model")
        if inst.label is not None and len(inst.options) < 2:
            raise ValueError(f"{inst.uid}: training needs at least 2 options")
        lex = cfg.lexical_features
        dt = self.store.dtype
        all_opt = [t for opt in inst.options for t in opt]
        em_p = [em_features(inst.passage, inst.question, dt),
                em_features(inst.passage, all_opt, dt)] if lex else []
        em_q = [em_features(inst.question, all_opt, dt)] if lex else []
        p = self._stream(inst.passage, self.proj_p, em_p, training, rng)
        q = self._stream(inst.question, self.proj_q, em_q, training, rng)
        p = dropout(self.encoder(p), cfg.dropout, rng, training)
        if self.encoder_q is not None:
            q = dropout(self.encoder_q(q), cfg.dropout, rng, training)
        pq, _ = self._attend(p, q, getattr(self, "attn_pq", None))
        scores = []
        for opt in inst.options:
            a = self._stream(opt, self.proj_a, [], training, rng)
            pa, ap = self._attend(pq, a, getattr(self, "attn_pa", None))
            feat = concat([reduce_sum(pa, axis=0), reduce_sum(ap, axis=0)], axis=-1)
            if lex:
                ov = np.concatenate([
                    overlap_features(opt, inst.passage, self.idf, dt),
                    overlap_features(opt, inst.question, self.idf, dt)])
                feat = concat([feat, Tensor(ov)], axis=-1)
            feat = dropout(feat, cfg.dropout, rng, training)
            h = relu(linear(reshape(feat, (1, feat.shape[0])), self.head1))
            scores.append(linear(h, self.head2))
        logits = concat(scores, axis=-1)  # (1, n_options)
        probs = softmax(logits)
        loss = None
        if inst.label is not None:
            loss = softmax_cross_entropy(logits, np.array([inst.label]))
        return probs.data.reshape(-1), loss

    def predict_mcq(self, inst: McqInstance) -> int:
        probs, _ = self.mcq_forward(inst)
        return int(np.argmax(probs))

    # -- span extraction ----------------------------------------------------

    def span_forward(self, inst: SpanInstance, training: bool = False,
                     rng: Rng | None = None):
        """Returns (start probabilities, end probabilities, loss or None)."""
        cfg = self.config
        if cfg.task != "span":
            raise ValueError("span_forward on an mcq model")
        lex = cfg.lexical_features
        dt = self.store.dtype
        ell = len(inst.passage)
        em_p = [em_features(inst.passage, inst.question, dt)] if lex else []
        em_q = [em_features(inst.question, inst.passage, dt)] if lex else []
        p = self._stream(inst.passage, self.proj_p, em_p, training, rng)
        q = self._stream(inst.question, self.proj_q, em_q, training, rng)
        p = dropout(self.encoder(p), cfg.dropout, rng, training)
        if self.encoder_q is not None:
            q = dropout(self.encoder_q(q), cfg.dropout, rng, training)
        aligned, _ = self._attend(p, q, getattr(self, "attn_pq", None))
        g = span_compare(aligned, p, self.compare)
        h1 = self.pointer1(g)
        h2 = self.pointer2(h1)
        row_s = reshape(linear(h1, self.start_lin), (1, ell))
        row_e = reshape(linear(h2, self.end_lin), (1, ell))
        p_s = softmax(row_s)
        p_e = softmax(row_e)
        loss = None
        if inst.start is not None:
            loss = add(softmax_cross_entropy(row_s, np.array([inst.start])),
                       softmax_cross_entropy(row_e, np.array([inst.end])))
        return p_s.data.reshape(-1), p_e.data.reshape(-1), loss

    def predict_span(self, inst: SpanInstance) -> tuple[int, int, list[str]]:
        p_s, p_e, _ = self.span_forward(inst)
        s, e, _score = best_span(p_s, p_e, self.config.max_span_len)
        return s, e, inst.passage[s:e + 1]

    # -- shared -------------------------------------------------------------

    def loss(self, inst, training: bool = False, rng: Rng | None = None) -> Tensor:
        if self.config.task == "mcq":
            _, loss = self.mcq_forward(inst, training, rng)
        else:
            _, _, loss = self.span_forward(inst, training, rng)
        if loss is None:
            raise ValueError(f"{inst.uid}: instance has no gold label")
        return loss


def best_span(p_start: np.ndarray, p_end: np.ndarray, max_len: int = 15):
    """Most probable span with end >= start and length <= max_len.

    Maximizes p_start[s] * p_end[e]; ties resolve to the smallest start, then
    the smallest end (row-major argmax).
    """
    ell = len(p_start)
    if ell == 0 or len(p_end) != ell:
        raise ValueError(f"bad pointer lengths: {len(p_start)}, {len(p_end)}")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    outer = np.outer(p_start, p_end)
    upper = np.triu(np.ones((ell, ell), dtype=bool))
    band = ~np.triu(np.ones((ell, ell), dtype=bool), k=max_len)
    scores = np.where(upper & band, outer, -1.0)
    flat = int(np.argmax(scores))
    s, e = divmod(flat, ell)
    return int(s), int(e), float(outer[s, e])
