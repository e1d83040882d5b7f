"""Finite-difference gradient verification.

``grad_check`` compares tape gradients against fp64 central differences for
every trainable parameter (coordinates subsampled on large tensors). The
suite registry covers each differentiable component at tiny dimensions,
registering the test inputs themselves as parameters so input-side gradients
are verified too.
"""

from __future__ import annotations

import numpy as np

from .data import EmbeddingMatrix, McqInstance, SpanInstance, Vocab
from .layers import (init_bi_attention, init_compare, init_highway, init_linear,
                     bi_attention, highway, linear, span_compare)
from .model import BiAttentiveModel, ModelConfig
from .mru import (MruConfig, RangeSet, contract_expand, fuse_gates, init_mru_params,
                  recurrent_mru, simple_mru)
from .ops import add, mul, reduce_sum, reshape, softmax_cross_entropy
from .rnn import gru_forward, init_gru_params, init_lstm_params, lstm_forward, make_encoder
from .tensor import ParameterStore, Rng, Tape, Tensor


def grad_check(build_loss, store: ParameterStore, h: float = 1e-5,
               max_coords: int = 16, seed: int = 0) -> float:
    """Max relative error |g_ad - g_fd| / max(|g_ad| + |g_fd|, 1e-8) over
    (subsampled) coordinates of every trainable parameter. ``build_loss``
    must be a deterministic closure over the store's current values."""
    if store.dtype != np.float64:
        raise ValueError("grad_check requires an fp64 parameter store")
    store.zero_grads()
    with Tape() as tape:
        tape.backward(build_loss())

    def f() -> float:
        return build_loss().item()

    picker = np.random.Generator(np.random.Philox(key=seed))
    worst = 0.0
    for _name, p in store.trainable_items():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        k = flat.size
        idxs = np.arange(k) if k <= max_coords else \
            np.sort(picker.permutation(k)[:max_coords])
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            err = abs(grad[i] - fd) / max(abs(grad[i]) + abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


def _weighted_sum(y: Tensor, r: np.ndarray) -> Tensor:
    return reduce_sum(mul(y, r))


def _store_rng(seed: int):
    return ParameterStore("fp64"), Rng(seed)


def _param_input(store, rng, name, shape):
    return store.add(name, rng.normal(shape))


def _perturb(store, rng, scale=0.05):
    # nudge every parameter (zero-initialized biases included) so no relu
    # pre-activation sits exactly on the kink, where AD and FD legitimately
    # disagree by half the slope
    for _name, p in store.trainable_items():
        p.data += rng.uniform(p.data.shape, -scale, scale)


def _probe(store, rng, scale=0.01):
    # fixed linear term over all parameters with coefficients bounded away
    # from zero; keeps each coordinate's true gradient above the fp64
    # finite-difference noise so the relative-error floor never dominates
    coeffs = []
    for _name, p in store.trainable_items():
        mag = rng.uniform(p.data.shape, 0.5, 1.5)
        sign = np.where(rng.uniform(p.data.shape) < 0.5, -1.0, 1.0)
        coeffs.append((p, mag * sign * scale))

    def term():
        total = None
        for p, c in coeffs:
            t = reduce_sum(mul(p, c))
            total = t if total is None else add(total, t)
        return total

    return term


def _finish(store, rng, main_loss):
    """Perturb params off kinks and wrap the loss with the linear probe."""
    _perturb(store, rng)
    probe = _probe(store, rng)

    def build():
        return add(main_loss(), probe())

    return store, build


def _suite_contract_expand(seed=101):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (6, 4))
    w = store.add("w", rng.glorot(4, 4))
    b = store.add("b", rng.normal((4,)) * 0.1)
    r1 = rng.normal((6, 4))
    r2 = rng.normal((6, 4))

    def build():
        # r=2 exact blocks plus r=5 with a short tail, both bias orders
        a = _weighted_sum(contract_expand(x, 2, w, b), r1)
        c = _weighted_sum(contract_expand(x, 5, w, b, bias_inside=True), r2)
        return add(a, c)

    return _finish(store, rng, build)


def _suite_fuse_gates(seed=102):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (6, 4))
    params = init_mru_params(store, rng, "mru", 4, RangeSet((1, 3)), recurrent=False)
    r = rng.normal((6, 4))

    def build():
        expanded = [contract_expand(x, rr, params.contract_w[j], params.contract_b[j])
                    for j, rr in enumerate((1, 3))]
        return _weighted_sum(fuse_gates(expanded, params), r)

    return _finish(store, rng, build)


def _suite_simple_mru(seed=103):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (7, 4))
    ranges = RangeSet((1, 2, 5))
    params = init_mru_params(store, rng, "mru", 4, ranges, recurrent=False)
    r = rng.normal((7, 4))

    def build():
        return _weighted_sum(simple_mru(x, params, ranges), r)

    return _finish(store, rng, build)


def _suite_recurrent_mru(seed=104):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (7, 4))
    ranges = RangeSet((1, 2, 5))
    params = init_mru_params(store, rng, "mru", 4, ranges, recurrent=True)
    r = rng.normal((7, 4))

    def build():
        return _weighted_sum(recurrent_mru(x, params, ranges), r)

    return _finish(store, rng, build)


def _suite_lstm(seed=105):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (6, 4))
    params = init_lstm_params(store, rng, "lstm", 4, 3)
    mask = np.array([1, 1, 1, 1, 1, 0])
    r = rng.normal((6, 3))

    def build():
        return _weighted_sum(lstm_forward(x, mask, params), r)

    return _finish(store, rng, build)


def _suite_gru(seed=106):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (6, 4))
    params = init_gru_params(store, rng, "gru", 4, 3)
    mask = np.array([1, 1, 1, 1, 0, 0])
    r = rng.normal((6, 3))

    def build():
        return _weighted_sum(gru_forward(x, mask, params), r)

    return _finish(store, rng, build)


def _suite_hybrid(seed=107):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (6, 4))
    enc = make_encoder(store, rng, "hybrid", "mru_lstm", 4, 0,
                       MruConfig("recurrent", RangeSet((1, 2))))
    r = rng.normal((6, 4))

    def build():
        return _weighted_sum(enc(x), r)

    return _finish(store, rng, build)


def _suite_highway(seed=108):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (5, 4))
    params = init_highway(store, rng, "hw", 4)
    r = rng.normal((5, 4))

    def build():
        return _weighted_sum(highway(x, params), r)

    return _finish(store, rng, build)


def _suite_bi_attention(seed=109):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (5, 4))
    y = _param_input(store, rng, "y", (3, 4))
    params = init_bi_attention(store, rng, "attn", 4)
    rx = rng.normal((5, 4))
    ry = rng.normal((3, 4))

    def build():
        xa, ya = bi_attention(x, y, params)
        return add(_weighted_sum(xa, rx), _weighted_sum(ya, ry))

    return _finish(store, rng, build)


def _suite_span_compare(seed=110):
    store, rng = _store_rng(seed)
    x = _param_input(store, rng, "x", (5, 4))
    y = _param_input(store, rng, "y", (5, 4))
    params = init_compare(store, rng, "cmp", 4, "submultnn")
    r = rng.normal((5, 4))

    def build():
        return _weighted_sum(span_compare(x, y, params), r)

    return _finish(store, rng, build)


def _suite_pointer(seed=111):
    store, rng = _store_rng(seed)
    g = _param_input(store, rng, "g", (6, 4))
    cfg = MruConfig("recurrent", RangeSet((1, 2)))
    enc1 = make_encoder(store, rng, "ptr1", "mru", 4, 0, cfg)
    enc2 = make_encoder(store, rng, "ptr2", "mru", 4, 0, cfg)
    lin_s = init_linear(store, rng, "lin_s", 4, 1)
    lin_e = init_linear(store, rng, "lin_e", 4, 1)

    def build():
        h1 = enc1(g)
        h2 = enc2(h1)
        row_s = reshape(linear(h1, lin_s), (1, 6))
        row_e = reshape(linear(h2, lin_e), (1, 6))
        return add(softmax_cross_entropy(row_s, np.array([1])),
                   softmax_cross_entropy(row_e, np.array([3])))

    return _finish(store, rng, build)


def _tiny_vocab_emb(rng: Rng, tokens, d_emb=5):
    vocab = Vocab(["<pad>", "<unk>"] + sorted(set(tokens)))
    table = rng.normal((len(vocab), d_emb)) * 0.3
    table[0] = 0.0
    return vocab, EmbeddingMatrix(table, frozen=False)


def _suite_mcq_head(seed=112):
    store, rng = _store_rng(seed)
    inst = McqInstance(
        "g1",
        ["t1", "t2", "t3", "t4", "t2", "t5", "t6", "t7"],
        ["t3", "t8", "t2", "t9"],
        [["t5", "t2"], ["t4", "t9"], ["t8", "t1"]],
        label=1)
    toks = inst.passage + inst.question + [t for o in inst.options for t in o]
    vocab, emb = _tiny_vocab_emb(rng, toks)
    cfg = ModelConfig(task="mcq", dim=6, encoder_kind="simple_mru",
                      ranges=(1, 2), dropout=0.0)
    model = BiAttentiveModel(store, rng, cfg, emb, vocab)

    def build():
        return model.loss(inst)

    return _finish(store, rng, build)


def _suite_span_head(seed=113):
    store, rng = _store_rng(seed)
    inst = SpanInstance(
        "g2",
        ["t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"],
        ["t3", "t10", "t5", "t11"],
        start=2, end=4)
    vocab, emb = _tiny_vocab_emb(rng, inst.passage + inst.question)
    cfg = ModelConfig(task="span", dim=6, encoder_kind="mru",
                      ranges=(1, 2), dropout=0.0)
    model = BiAttentiveModel(store, rng, cfg, emb, vocab)

    def build():
        return model.loss(inst)

    return _finish(store, rng, build)


GRAD_SUITES = {
    "contract_expand": _suite_contract_expand,
    "fuse_gates": _suite_fuse_gates,
    "simple_mru": _suite_simple_mru,
    "recurrent_mru": _suite_recurrent_mru,
    "lstm": _suite_lstm,
    "gru": _suite_gru,
    "hybrid": _suite_hybrid,
    "highway": _suite_highway,
    "bi_attention": _suite_bi_attention,
    "span_compare": _suite_span_compare,
    "pointer": _suite_pointer,
    "mcq_head": _suite_mcq_head,
    "span_head": _suite_span_head,
}


def run_suite(name: str, h: float = 1e-5, max_coords: int = 16) -> float:
    store, build = GRAD_SUITES[name]()
    return grad_check(build, store, h=h, max_coords=max_coords)


def run_all(names=None, h: float = 1e-5, max_coords: int = 16,
            tol: float = 1e-4) -> dict[str, float]:
    results = {}
    for name in names or GRAD_SUITES:
        results[name] = run_suite(name, h=h, max_coords=max_coords)
    return results
