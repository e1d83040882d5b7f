"""Training loop (Adam, dropout, early stopping), evaluation, and model
assembly from a Config. All randomness flows from one seeded generator split
into named streams, so a fixed (config, seed) pair reproduces the run."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, config_to_dict, parse_config
from .data import (DataError, EmbeddingMatrix, SpanInstance, Vocab,
                   build_vocab_embeddings, load_jsonl, truncate_instances)
from .layers import compute_idf
from .metrics import (metric_accuracy, metric_bleu, metric_em, metric_f1,
                      metric_rouge_l, rouge_l_best_span)
from .model import BiAttentiveModel, ModelConfig
from .optim import Adam
from .tensor import Rng, ParameterStore, Tape

SELECTION_METRIC = {"mcq": "accuracy", "span": "f1"}


@dataclass
class MetricReport:
    task: str
    count: int
    metrics: dict[str, float]

    def kv_lines(self, prefix: str = "") -> list[str]:
        tag = f"{prefix}_" if prefix else ""
        lines = [f"{tag}count={self.count}"]
        lines += [f"{tag}{k}={v:.6f}" for k, v in self.metrics.items()]
        return lines

    def to_csv(self) -> str:
        rows = ["metric,value"] + [f"{k},{v:.6f}" for k, v in self.metrics.items()]
        return "\n".join(rows) + "\n"


@dataclass
class TrainResult:
    checkpoint_path: str
    best_epoch: int
    best_metric: float
    selection_metric: str
    history: list[dict] = field(default_factory=list)
    report: MetricReport | None = None


def model_config(cfg: Config) -> ModelConfig:
    return ModelConfig(
        task=cfg.task, dim=cfg.dim, compare=cfg.compare,
        max_span_len=cfg.max_span_len, biattention=cfg.biattention,
        lexical_features=cfg.lexical_features, dropout=cfg.dropout,
        encoder_kind=cfg.encoder_kind, encoder_width=cfg.encoder_width,
        pointer_kind=cfg.pointer_kind, ranges=tuple(cfg.ranges),
        bias_inside=cfg.bias_inside, raw_output_gate=cfg.raw_output_gate,
        apply_to_query=cfg.apply_to_query)


def respan_instances(instances: list[SpanInstance], max_span_len: int) -> list[SpanInstance]:
    """Fill missing span indices by best Rouge-L match of the reference answer
    against the passage; degenerate (zero-overlap) instances are dropped."""
    out = []
    for inst in instances:
        if inst.start is not None:
            out.append(inst)
            continue
        found = rouge_l_best_span(inst.passage, inst.answer_text, max_span_len)
        if found.degenerate:
            continue
        out.append(SpanInstance(inst.uid, inst.passage, inst.question,
                                found.start, found.end, inst.answer_text))
    return out


def evaluate_model(model: BiAttentiveModel, instances: list) -> MetricReport:
    """Deterministic metrics (dropout off, fixed instance-wise forward)."""
    if model.config.task == "mcq":
        preds = [model.predict_mcq(inst) for inst in instances]
        golds = [inst.label for inst in instances]
        return MetricReport("mcq", len(instances),
                            {"accuracy": metric_accuracy(preds, golds)})
    pred_tokens = []
    gold_tokens = []
    for inst in instances:
        _s, _e, toks = model.predict_span(inst)
        pred_tokens.append(toks)
        if inst.answer_text is not None:
            gold_tokens.append(inst.answer_text)
        else:
            gold_tokens.append(inst.passage[inst.start:inst.end + 1])
    return MetricReport("span", len(instances), {
        "em": metric_em(pred_tokens, gold_tokens),
        "f1": metric_f1(pred_tokens, gold_tokens),
        "bleu1": metric_bleu(pred_tokens, gold_tokens, 1),
        "bleu4": metric_bleu(pred_tokens, gold_tokens, 4),
        "rouge_l": metric_rouge_l(pred_tokens, gold_tokens),
    })


def _load_split(path: str, cfg: Config, name: str, for_training: bool) -> list:
    if not path:
        raise DataError(f"data.{name}_path is not set")
    insts = truncate_instances(load_jsonl(path, cfg.task), cfg.max_len)
    if cfg.task == "span":
        if cfg.respan_with_rouge:
            insts = respan_instances(insts, cfg.max_span_len)
        if for_training:
            missing = [i.uid for i in insts if i.start is None]
            if missing:
                raise DataError(
                    f"{path}: {len(missing)} records lack answer spans (e.g. "
                    f"{missing[0]}); provide indices or set data.respan_with_rouge")
    if not insts:
        raise DataError(f"{path}: no usable records after preprocessing")
    return insts


def build_model(cfg: Config, vocab: Vocab, emb: EmbeddingMatrix,
                idf: dict | None, rng: Rng) -> tuple[BiAttentiveModel, ParameterStore]:
    store = ParameterStore(cfg.dtype)
    model = BiAttentiveModel(store, rng, model_config(cfg), emb, vocab, idf)
    return model, store


def train(cfg: Config, log=print) -> TrainResult:
    t_start = time.perf_counter()
    train_insts = _load_split(cfg.train_path, cfg, "train", for_training=True)
    dev_insts = _load_split(cfg.dev_path, cfg, "dev", for_training=False)
    root = Rng(cfg.seed)
    vocab, emb = build_vocab_embeddings(
        train_insts, root.split("embed"), cfg.d_emb,
        cfg.embeddings_path or None, cfg.frozen_embeddings,
        dtype=np.float64 if cfg.dtype == "fp64" else np.float32)
    idf = None
    if cfg.use_idf:
        idf = compute_idf([inst.passage for inst in train_insts])
    model, store = build_model(cfg, vocab, emb, idf, root.split("init"))
    adam = Adam(store, cfg.lr)
    shuffle_rng = root.split("shuffle")
    drop_rng = root.split("dropout")
    sel_name = SELECTION_METRIC[cfg.task]
    log(f"train_records={len(train_insts)} dev_records={len(dev_insts)} "
        f"params={sum(t.data.size for _, t in store.items())} "
        f"selection_metric={sel_name}")

    best_val = -math.inf
    best_epoch = 0
    best_state: dict | None = None
    best_report: MetricReport | None = None
    bad_epochs = 0
    history: list[dict] = []
    n = len(train_insts)
    stop_reason = "epochs_exhausted"
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses: list[float] = []
        for lo in range(0, n, cfg.batch_size):
            chunk = order[lo:lo + cfg.batch_size]
            store.zero_grads()
            inv = 1.0 / len(chunk)
            for idx in chunk:
                with Tape() as tape:
                    loss = model.loss(train_insts[int(idx)], training=True, rng=drop_rng)
                    tape.backward(loss * inv)
                losses.append(loss.item())
            adam.step()
        train_loss = math.fsum(losses) / len(losses)
        report = evaluate_model(model, dev_insts)
        sel = report.metrics[sel_name]
        seconds = time.perf_counter() - t0
        row = {"epoch": epoch, "train_loss": train_loss, "seconds": seconds}
        row.update({f"dev_{k}": v for k, v in report.metrics.items()})
        history.append(row)
        log(f"epoch={epoch} train_loss={train_loss:.6f} "
            + " ".join(f"dev_{k}={v:.6f}" for k, v in report.metrics.items())
            + f" seconds={seconds:.2f}")
        if sel > best_val:
            best_val = sel
            best_epoch = epoch
            best_state = store.snapshot()
            best_report = report
            bad_epochs = 0
        else:
            bad_epochs += 1
        if cfg.target_metric and report.metrics.get(cfg.target_metric, -math.inf) \
                >= cfg.target_value:
            stop_reason = "target_reached"
            log(f"stop=target_reached epoch={epoch} "
                f"{cfg.target_metric}={report.metrics[cfg.target_metric]:.6f}")
            break
        if cfg.patience and bad_epochs >= cfg.patience:
            stop_reason = "early_stop"
            log(f"stop=early_stop epoch={epoch} patience={cfg.patience}")
            break

    if best_state is not None:
        store.load_state(best_state)
    meta = {
        "task": cfg.task,
        "vocab": vocab.tokens,
        "frozen_embeddings": emb.frozen,
        "d_emb": emb.dim,
        "idf": idf,
        "best_epoch": best_epoch,
        "best_metric": best_val,
        "selection_metric": sel_name,
        "stop_reason": stop_reason,
    }
    save_checkpoint(cfg.checkpoint_path, store, config_to_dict(cfg), meta)
    log(f"checkpoint={cfg.checkpoint_path} best_epoch={best_epoch} "
        f"best_{sel_name}={best_val:.6f} total_seconds={time.perf_counter() - t_start:.2f}")
    return TrainResult(cfg.checkpoint_path, best_epoch, best_val, sel_name,
                       history, best_report)


def load_model(checkpoint_path: str) -> tuple[BiAttentiveModel, Config]:
    """Rebuild a model and its weights from a self-contained checkpoint."""
    arrays, config_echo, header = load_checkpoint(checkpoint_path)
    cfg = parse_config(config_echo)
    meta = header.get("meta", {})
    vocab = Vocab(meta["vocab"])
    table = arrays["embed/table"]
    emb = EmbeddingMatrix(table, bool(meta.get("frozen_embeddings", True)))
    idf = meta.get("idf")
    model, store = build_model(cfg, vocab, emb, idf, Rng(0))
    store.load_state(arrays)
    return model, cfg


def evaluate_checkpoint(checkpoint_path: str, data_path: str,
                        max_len: int | None = None) -> MetricReport:
    model, cfg = load_model(checkpoint_path)
    insts = load_jsonl(data_path, cfg.task)
    insts = truncate_instances(insts, cfg.max_len if max_len is None else max_len)
    return evaluate_model(model, insts)
