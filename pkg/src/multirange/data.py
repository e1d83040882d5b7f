"""Dataset IO, vocabulary/embedding construction, and synthetic task
generators.

Records are JSON objects, one per line. Multiple-choice records carry
id/passage/question/options/label; span records carry id/passage/question and
either an answer_start/answer_end pair, an answer_text token list, or both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tensor import Rng

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class DataError(ValueError):
    """Malformed dataset file or record."""


@dataclass
class McqInstance:
    uid: str
    passage: list[str]
    question: list[str]
    options: list[list[str]]
    label: int | None = None


@dataclass
class SpanInstance:
    uid: str
    passage: list[str]
    question: list[str]
    start: int | None = None
    end: int | None = None
    answer_text: list[str] | None = None


def _check_tokens(value, name: str, where: str, allow_empty: bool = False) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise DataError(f"{where}: {name} must be a list of strings")
    if not value and not allow_empty:
        raise DataError(f"{where}: {name} is empty")
    return value


def validate_mcq_record(rec: dict, where: str = "record") -> McqInstance:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected a JSON object")
    uid = rec.get("id")
    if not isinstance(uid, str) or not uid:
        raise DataError(f"{where}: id must be a non-empty string")
    passage = _check_tokens(rec.get("passage"), "passage", where)
    question = _check_tokens(rec.get("question"), "question", where)
    options = rec.get("options")
    if not isinstance(options, list) or not options:
        raise DataError(f"{where}: options must be a non-empty list")
    options = [_check_tokens(o, f"options[{j}]", where) for j, o in enumerate(options)]
    if "label" not in rec:
        raise DataError(f"{where}: missing field 'label'")
    label = rec["label"]
    if not isinstance(label, int) or isinstance(label, bool):
        raise DataError(f"{where}: label must be an integer")
    if not 0 <= label < len(options):
        raise DataError(f"{where}: label {label} out of range for {len(options)} options")
    return McqInstance(uid, passage, question, options, label)


def validate_span_record(rec: dict, where: str = "record") -> SpanInstance:
    if not isinstance(rec, dict):
        raise DataError(f"{where}: expected a JSON object")
    uid = rec.get("id")
    if not isinstance(uid, str) or not uid:
        raise DataError(f"{where}: id must be a non-empty string")
    passage = _check_tokens(rec.get("passage"), "passage", where)
    question = _check_tokens(rec.get("question"), "question", where)
    start = rec.get("answer_start")
    end = rec.get("answer_end")
    text = rec.get("answer_text")
    if text is not None:
        text = _check_tokens(text, "answer_text", where)
    if (start is None) != (end is None):
        raise DataError(f"{where}: answer_start and answer_end must be given together")
    if start is not None:
        for name, v in (("answer_start", start), ("answer_end", end)):
            if not isinstance(v, int) or isinstance(v, bool):
                raise DataError(f"{where}: {name} must be an integer")
        if not 0 <= start <= end < len(passage):
            raise DataError(
                f"{where}: span [{start}, {end}] invalid for passage length {len(passage)}")
    elif text is None:
        raise DataError(f"{where}: record needs answer_start/answer_end or answer_text")
    return SpanInstance(uid, passage, question, start, end, text)


_VALIDATORS = {"mcq": validate_mcq_record, "span": validate_span_record}


def load_jsonl(path: str, task: str) -> list:
    """Load and validate a JSONL dataset; errors name the offending line."""
    if task not in _VALIDATORS:
        raise DataError(f"unknown task {task!r}; expected one of {sorted(_VALIDATORS)}")
    validate = _VALIDATORS[task]
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            out.append(validate(rec, f"{path}:{lineno}"))
    if not out:
        raise DataError(f"{path}: no records")
    return out


def instance_to_record(inst) -> dict:
    if isinstance(inst, McqInstance):
        rec = {"id": inst.uid, "passage": inst.passage, "question": inst.question,
               "options": inst.options}
        if inst.label is not None:
            rec["label"] = inst.label
        return rec
    rec = {"id": inst.uid, "passage": inst.passage, "question": inst.question}
    if inst.start is not None:
        rec["answer_start"] = inst.start
        rec["answer_end"] = inst.end
    if inst.answer_text is not None:
        rec["answer_text"] = inst.answer_text
    return rec


def write_jsonl(instances: list, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")


def truncate_instances(instances: list, max_len: int) -> list:
    """Cap passage length. Span instances whose gold span would be cut are
    dropped (they cannot be represented after truncation)."""
    if max_len <= 0:
        return list(instances)
    out = []
    for inst in instances:
        if len(inst.passage) <= max_len:
            out.append(inst)
            continue
        if isinstance(inst, SpanInstance):
            if inst.end is not None and inst.end >= max_len:
                continue
            out.append(SpanInstance(inst.uid, inst.passage[:max_len], inst.question,
                                    inst.start, inst.end, inst.answer_text))
        else:
            out.append(McqInstance(inst.uid, inst.passage[:max_len], inst.question,
                                   inst.options, inst.label))
    return out


class Vocab:
    """Token index with reserved pad (0) and unknown (1) slots."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            tokens = [PAD_TOKEN, UNK_TOKEN] + [t for t in tokens
                                               if t not in (PAD_TOKEN, UNK_TOKEN)]
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens: list[str]) -> np.ndarray:
        return np.fromiter((self.index.get(t, UNK_ID) for t in tokens),
                           dtype=np.int64, count=len(tokens))


def build_vocab(token_seqs, min_count: int = 1) -> Vocab:
    counts: dict[str, int] = {}
    order: list[str] = []
    for seq in token_seqs:
        for t in seq:
            if t not in counts:
                order.append(t)
            counts[t] = counts.get(t, 0) + 1
    kept = [t for t in order if counts[t] >= min_count]
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def instance_token_seqs(instances: list):
    for inst in instances:
        yield inst.passage
        yield inst.question
        if isinstance(inst, McqInstance):
            for opt in inst.options:
                yield opt


@dataclass
class EmbeddingMatrix:
    table: np.ndarray  # (vocab, d_emb); row 0 is all zeros (pad)
    frozen: bool = True

    @property
    def dim(self) -> int:
        return self.table.shape[1]


def load_pretrained_text(path: str, dim: int) -> dict[str, np.ndarray]:
    """Whitespace text format: token followed by `dim` floats per line."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                vectors[parts[0]] = np.asarray([float(v) for v in parts[1:]],
                                               dtype=np.float64)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: non-numeric embedding value") from e
    return vectors


def build_embeddings(vocab: Vocab, rng: Rng, dim: int, pretrained_path: str | None = None,
                     frozen: bool = True, dtype=np.float32) -> EmbeddingMatrix:
    """Uniform(-0.05, 0.05) init; pretrained vectors override where available;
    the pad row stays zero."""
    table = np.ascontiguousarray(rng.uniform((len(vocab), dim), -0.05, 0.05), dtype=dtype)
    table[PAD_ID] = 0.0
    if pretrained_path:
        vectors = load_pretrained_text(pretrained_path, dim)
        for tok, vec in vectors.items():
            idx = vocab.index.get(tok)
            if idx is not None and idx != PAD_ID:
                table[idx] = vec.astype(dtype)
    return EmbeddingMatrix(table, frozen)


def build_vocab_embeddings(instances: list, rng: Rng, d_emb: int,
                           pretrained_path: str | None = None, frozen: bool = True,
                           dtype=np.float32, min_count: int = 1) -> tuple[Vocab, EmbeddingMatrix]:
    vocab = build_vocab(instance_token_seqs(instances), min_count)
    emb = build_embeddings(vocab, rng, d_emb, pretrained_path, frozen, dtype)
    return vocab, emb


def _fillers(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:04d}" for i in range(n)]


def gen_mcq_synthetic(seed: int, n: int, seq_len: int = 60, vocab_size: int = 80,
                      gap: int = 20, n_options: int = 4) -> list[McqInstance]:
    """Key/value pairing task.

    Each passage is filler except one planted key token and, `gap` positions
    later, its paired value token. The question names the key among question
    fillers; exactly one option contains the paired value, the others carry
    values of keys absent from the passage. Option fillers are drawn from the
    passage so surface overlap alone cannot separate the options.
    """
    if seq_len <= gap + 1:
        raise ValueError(f"seq_len {seq_len} must exceed gap+1 ({gap + 1})")
    if n_options < 2:
        raise ValueError("need at least 2 options")
    rng = Rng(seed)
    pool = _fillers("pw", vocab_size)
    qpool = _fillers("qw", max(8, vocab_size // 4))
    n_pairs = max(n_options + 2, min(64, vocab_size))
    out = []
    for i in range(n):
        r = rng.split(f"mcq{i}")
        passage = [pool[j] for j in r.integers(0, len(pool), size=seq_len)]
        pair_ids = r.permutation(n_pairs)[:n_options]
        gold_pair = int(pair_ids[0])
        p = int(r.integers(0, seq_len - gap))
        passage[p] = f"key{gold_pair:03d}"
        passage[p + gap] = f"val{gold_pair:03d}"
        question = [f"key{gold_pair:03d}"] + [qpool[j] for j in
                                              r.integers(0, len(qpool), size=7)]
        r.shuffle(question)
        filler_pos = [j for j in range(seq_len) if j not in (p, p + gap)]
        label = int(r.integers(0, n_options))
        order = list(pair_ids[1:])
        order.insert(label, gold_pair)
        options = []
        for pid in order:
            opt = [f"val{int(pid):03d}"] + [passage[filler_pos[int(j)]] for j in
                                            r.integers(0, len(filler_pos), size=2)]
            r.shuffle(opt)
            options.append(opt)
        out.append(McqInstance(f"mcq{i:06d}", passage, question, options, label))
    return out


def gen_span_synthetic(seed: int, n: int, seq_len: int = 60, vocab_size: int = 80,
                       gap: int = 10, span_len: int = 3) -> list[SpanInstance]:
    """Marker-offset extraction task.

    The question contains a marker token that appears exactly once in the
    passage; the answer is the `span_len` tokens starting `gap` positions
    after the marker. Question fillers are disjoint from passage fillers so
    the marker is the only question token present in the passage.
    """
    if seq_len < gap + span_len + 1:
        raise ValueError(f"seq_len {seq_len} too short for gap {gap} + span {span_len}")
    rng = Rng(seed)
    pool = _fillers("pw", vocab_size)
    qpool = _fillers("qw", max(8, vocab_size // 4))
    n_markers = max(8, min(64, vocab_size))
    out = []
    for i in range(n):
        r = rng.split(f"span{i}")
        passage = [pool[j] for j in r.integers(0, len(pool), size=seq_len)]
        marker = f"mrk{int(r.integers(0, n_markers)):03d}"
        p = int(r.integers(0, seq_len - gap - span_len))
        passage[p] = marker
        start = p + gap
        end = start + span_len - 1
        question = [marker] + [qpool[j] for j in r.integers(0, len(qpool), size=7)]
        r.shuffle(question)
        out.append(SpanInstance(f"span{i:06d}", passage, question, start, end,
                                passage[start:end + 1]))
    return out
