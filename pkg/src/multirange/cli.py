"""Command-line interface: train, eval, bench, gradcheck, gen-data.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 check failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import kernels
from .bench import DEFAULT_ENCODERS, bench_rows, to_csv
from .checkpoint import CheckpointError
from .config import ConfigError, load_config, parse_config
from .data import DataError, gen_mcq_synthetic, gen_span_synthetic, write_jsonl
from .gradcheck import GRAD_SUITES, run_suite
from .train import evaluate_checkpoint, train


class UsageError(Exception):
    pass


class CheckFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; we reserve 2 for data errors
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="multirange", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", help="JSON config path (flat dotted keys)")
    t.add_argument("--preset", choices=["race-like", "searchqa-like", "narrativeqa-like"])
    t.add_argument("--seed", type=int, help="override train.seed")
    t.add_argument("--out", help="override train.checkpoint_path")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--max-len", type=int, default=None)
    e.add_argument("--csv", help="also write the metric report as CSV")

    b = sub.add_parser("bench", help="encoder throughput benchmark")
    b.add_argument("--encoders", default=",".join(DEFAULT_ENCODERS))
    b.add_argument("--seq-lens", default="500")
    b.add_argument("--dim", type=int, default=250)
    b.add_argument("--batch", type=int, default=32)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=7)
    b.add_argument("--dtype", choices=["fp32", "fp64"], default="fp32")
    b.add_argument("--kernels", choices=["auto", "numpy", "numba", "both"],
                   default="auto", help="scan kernel backend to benchmark")
    b.add_argument("--out", help="CSV output path (stdout when omitted)")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--suites", help="comma-separated subset (default: all)")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--coords", type=int, default=16)

    d = sub.add_parser("gen-data", help="write a synthetic dataset")
    d.add_argument("--task", choices=["mcq", "span"], required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--n", type=int, default=1000)
    d.add_argument("--seed", type=int, default=7)
    d.add_argument("--seq-len", type=int, default=60)
    d.add_argument("--vocab-size", type=int, default=80)
    d.add_argument("--gap", type=int, default=20)
    d.add_argument("--options", type=int, default=4)
    d.add_argument("--span-len", type=int, default=3)
    return p


def _cmd_train(args) -> int:
    if args.config:
        cfg = load_config(args.config, args.preset)
    else:
        cfg = parse_config({}, args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.checkpoint_path = args.out
    train(cfg)
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.data, args.max_len)
    print(f"task={report.task}")
    for line in report.kv_lines():
        print(line)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"csv={args.csv}")
    return 0


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise UsageError(f"invalid {what}: {text!r}") from None


def _bench_once(args, backend: str | None, out_path: str | None) -> None:
    encoders = [v for v in args.encoders.split(",") if v]
    seq_lens = _parse_int_list(args.seq_lens, "--seq-lens")
    prev = kernels.set_backend(backend) if backend else None
    try:
        rows = bench_rows(encoders, seq_lens, args.dim, args.batch,
                          args.repeats, args.seed, args.dtype)
    finally:
        if backend:
            kernels.set_backend(prev)
    csv = to_csv(rows)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(csv)
        print(f"kernel_backend={backend or kernels.get_backend()} csv={out_path}")
    else:
        print(f"# kernel_backend={backend or kernels.get_backend()}")
        sys.stdout.write(csv)


def _cmd_bench(args) -> int:
    if args.kernels == "both":
        backends = kernels.available_backends()
        if len(backends) < 2:
            raise ConfigError("--kernels both needs the jit backend; only "
                              f"{backends} available")
        for backend in backends:
            if args.out:
                base, ext = os.path.splitext(args.out)
                path = f"{base}.{backend}{ext or '.csv'}"
            else:
                path = None
            _bench_once(args, backend, path)
        return 0
    backend = None if args.kernels == "auto" else args.kernels
    if backend and backend not in kernels.available_backends():
        raise ConfigError(f"kernel backend {backend!r} is not available")
    _bench_once(args, backend, args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    names = list(GRAD_SUITES)
    if args.suites:
        names = [v for v in args.suites.split(",") if v]
        unknown = [v for v in names if v not in GRAD_SUITES]
        if unknown:
            raise UsageError(f"unknown gradcheck suites: {', '.join(unknown)}")
    failed = []
    for name in names:
        err = run_suite(name, max_coords=args.coords)
        ok = err < args.tol
        print(f"suite={name} max_rel_err={err:.3e} status={'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        raise CheckFailure(f"gradient check failed: {', '.join(failed)}")
    print(f"gradcheck=ok suites={len(names)} tol={args.tol:g}")
    return 0


def _cmd_gen_data(args) -> int:
    if args.task == "mcq":
        insts = gen_mcq_synthetic(args.seed, args.n, args.seq_len,
                                  args.vocab_size, args.gap, args.options)
    else:
        insts = gen_span_synthetic(args.seed, args.n, args.seq_len,
                                   args.vocab_size, args.gap, args.span_len)
    write_jsonl(insts, args.out)
    print(f"task={args.task} records={len(insts)} path={args.out}")
    return 0


_DISPATCH = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "gradcheck": _cmd_gradcheck,
    "gen-data": _cmd_gen_data,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, DataError, CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CheckFailure as e:
        print(f"check failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
