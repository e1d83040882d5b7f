"""Answer-quality metrics over token lists.

Exact match and unigram F1 normalize tokens first (lowercase, strip edge
punctuation, drop articles); BLEU and Rouge-L operate on raw tokens. Corpus
scores are means of per-item scores accumulated with math.fsum so record
order cannot change the result.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from typing import NamedTuple

_ARTICLES = {"a", "an", "the"}
_PUNCT = string.punctuation


def normalize_answer_tokens(tokens: list[str]) -> list[str]:
    out = []
    for t in tokens:
        t = t.lower().strip(_PUNCT)
        if t and t not in _ARTICLES:
            out.append(t)
    return out


def _mean(scores: list[float]) -> float:
    if not scores:
        return 0.0
    return math.fsum(scores) / len(scores)


def _check_paired(preds, golds):
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} references")


def metric_accuracy(preds: list[int], golds: list[int]) -> float:
    _check_paired(preds, golds)
    return _mean([1.0 if p == g else 0.0 for p, g in zip(preds, golds)])


def em_score(pred: list[str], gold: list[str]) -> float:
    return 1.0 if normalize_answer_tokens(pred) == normalize_answer_tokens(gold) else 0.0


def metric_em(preds: list[list[str]], golds: list[list[str]]) -> float:
    _check_paired(preds, golds)
    return _mean([em_score(p, g) for p, g in zip(preds, golds)])


def f1_score(pred: list[str], gold: list[str]) -> float:
    """Unigram bag-overlap F1 on normalized tokens. Two empty answers count
    as a perfect match."""
    p = Counter(normalize_answer_tokens(pred))
    g = Counter(normalize_answer_tokens(gold))
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((p & g).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(p.values())
    recall = overlap / sum(g.values())
    return 2.0 * precision * recall / (precision + recall)


def metric_f1(preds: list[list[str]], golds: list[list[str]]) -> float:
    _check_paired(preds, golds)
    return _mean([f1_score(p, g) for p, g in zip(preds, golds)])


_BLEU_EPS = 1e-9


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_score(pred: list[str], gold: list[str], max_n: int = 4) -> float:
    """Sentence BLEU with additive epsilon smoothing on each modified
    precision and the standard brevity penalty."""
    c, r = len(pred), len(gold)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        pc = _ngram_counts(pred, n)
        gc = _ngram_counts(gold, n)
        match = sum((pc & gc).values())
        total = sum(pc.values())
        log_sum += math.log((match + _BLEU_EPS) / (total + _BLEU_EPS))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def metric_bleu(preds: list[list[str]], golds: list[list[str]], max_n: int = 4) -> float:
    _check_paired(preds, golds)
    return _mean([bleu_score(p, g, max_n) for p, g in zip(preds, golds)])


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length, two-row dynamic program."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_score(pred: list[str], gold: list[str]) -> float:
    """LCS-based F-score, beta = 1."""
    if not pred or not gold:
        return 1.0 if not pred and not gold else 0.0
    lcs = lcs_length(pred, gold)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def metric_rouge_l(preds: list[list[str]], golds: list[list[str]]) -> float:
    _check_paired(preds, golds)
    return _mean([rouge_l_score(p, g) for p, g in zip(preds, golds)])


class BestSpan(NamedTuple):
    start: int
    end: int
    score: float
    degenerate: bool


def rouge_l_best_span(passage: list[str], ref: list[str], max_len: int = 15) -> BestSpan:
    """Passage span (length <= max_len) with the highest Rouge-L score against
    a reference answer. Ties keep the earliest start, then the shortest span.
    A best score of zero is flagged degenerate instead of silently pointing
    at position 0."""
    if not passage:
        raise ValueError("empty passage")
    best = BestSpan(0, 0, 0.0, True)
    ref_set = set(ref)
    # prefix counts of reference hits: spans without any hit score 0 exactly
    hits = [0]
    for t in passage:
        hits.append(hits[-1] + (1 if t in ref_set else 0))
    for s in range(len(passage)):
        for e in range(s, min(s + max_len, len(passage))):
            if hits[e + 1] == hits[s]:
                continue
            score = rouge_l_score(passage[s:e + 1], ref)
            if score > best.score:
                best = BestSpan(s, e, score, False)
    return best
