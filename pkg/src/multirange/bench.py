"""Throughput benchmark: tokens/sec per encoder at fixed (seq_len, dim, batch).

Every encoder sees the identical random inputs for a given (seq_len, seed),
and the output-width contract (out_dim == dim) is verified before timing so
all encoders are measured on the same computation shape. Two warmup runs
precede the timed repeats; the reported figure is the median tokens/sec.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .mru import MruConfig, RangeSet
from .ops import mul, reduce_sum
from .rnn import make_encoder
from .tensor import ParameterStore, Rng, Tape, Tensor

HEADER = "encoder,seq_len,dim,batch,mode,median_tokens_per_sec"
MODES = ("forward", "forward_backward")
DEFAULT_ENCODERS = ("simple_mru", "mru", "lstm")


@dataclass
class BenchRow:
    encoder: str
    seq_len: int
    dim: int
    batch: int
    mode: str
    median_tokens_per_sec: float

    def csv(self) -> str:
        return (f"{self.encoder},{self.seq_len},{self.dim},{self.batch},"
                f"{self.mode},{self.median_tokens_per_sec:.1f}")


def to_csv(rows: list[BenchRow]) -> str:
    return "\n".join([HEADER] + [r.csv() for r in rows]) + "\n"


def _timed(fn, repeats: int) -> float:
    fn()
    fn()  # two warmups (JIT compilation, allocator, caches)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_rows(encoders=DEFAULT_ENCODERS, seq_lens=(500,), dim: int = 250,
               batch: int = 32, repeats: int = 3, seed: int = 7,
               dtype: str = "fp32", ranges=(1, 2, 4, 10, 25),
               modes=MODES) -> list[BenchRow]:
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown bench mode {mode!r}")
    rng = Rng(seed)
    np_dtype = np.float64 if dtype == "fp64" else np.float32
    mru_cfg = MruConfig("recurrent", RangeSet(tuple(ranges)))
    rows: list[BenchRow] = []
    for ell in seq_lens:
        gen = rng.split(f"inputs:{ell}")
        inputs = [gen.normal((ell, dim), dtype=np_dtype) for _ in range(batch)]
        loss_w = rng.split(f"loss:{ell}").normal((ell, dim), dtype=np_dtype)
        tokens = float(batch * ell)
        for kind in encoders:
            store = ParameterStore(dtype)
            enc = make_encoder(store, rng.split(f"params:{kind}:{ell}"),
                               f"bench/{kind}", kind, dim, 0, mru_cfg)
            if enc.out_dim != dim:
                raise ValueError(
                    f"encoder {kind} emits width {enc.out_dim}, expected {dim}; "
                    "benchmark requires a shared output contract")

            def run_forward():
                for x in inputs:
                    enc(Tensor(x))

            def run_forward_backward():
                for x in inputs:
                    with Tape() as tape:
                        y = enc(Tensor(x))
                        tape.backward(reduce_sum(mul(y, loss_w)))
                store.zero_grads()

            impl = {"forward": run_forward, "forward_backward": run_forward_backward}
            for mode in modes:
                secs = _timed(impl[mode], repeats)
                rows.append(BenchRow(kind, ell, dim, batch, mode, tokens / secs))
    return rows
