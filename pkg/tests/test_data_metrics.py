"""Dataset IO, synthetic generators, vocabulary/embeddings, and metrics."""

import json
import math

import numpy as np
import pytest

from multirange.data import (PAD_ID, UNK_ID, DataError, McqInstance,
                             SpanInstance, build_embeddings, build_vocab,
                             build_vocab_embeddings, gen_mcq_synthetic,
                             gen_span_synthetic, load_jsonl, truncate_instances,
                             Vocab, write_jsonl)
from multirange.metrics import (bleu_score, em_score, f1_score, lcs_length,
                                metric_accuracy, metric_bleu, metric_em,
                                metric_f1, metric_rouge_l, rouge_l_best_span,
                                rouge_l_score)
from multirange.tensor import Rng


class TestJsonlIO:
    def _write(self, tmp_path, lines):
        path = tmp_path / "data.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    def test_mcq_round_trip(self, tmp_path):
        insts = gen_mcq_synthetic(0, 5, seq_len=12, gap=4, n_options=3)
        path = str(tmp_path / "mcq.jsonl")
        write_jsonl(insts, path)
        assert load_jsonl(path, "mcq") == insts

    def test_span_round_trip(self, tmp_path):
        insts = gen_span_synthetic(0, 5, seq_len=16, gap=4, span_len=2)
        path = str(tmp_path / "span.jsonl")
        write_jsonl(insts, path)
        assert load_jsonl(path, "span") == insts

    def test_non_ascii_preserved(self, tmp_path):
        inst = SpanInstance("u1", ["café", "日本語", "naïve"], ["où"],
                            0, 1, ["café", "日本語"])
        path = str(tmp_path / "na.jsonl")
        write_jsonl([inst], path)
        raw = open(path, encoding="utf-8").read()
        assert "café" in raw and "日本語" in raw
        assert load_jsonl(path, "span") == [inst]

    def test_invalid_json_names_line(self, tmp_path):
        good = json.dumps({"id": "a", "passage": ["x"], "question": ["y"],
                           "options": [["o"], ["p"]], "label": 0})
        path = self._write(tmp_path, [good, "{not json"])
        with pytest.raises(DataError, match=r":2"):
            load_jsonl(path, "mcq")

    def test_missing_label_names_field_and_line(self, tmp_path):
        rec = {"id": "a", "passage": ["x"], "question": ["y"],
               "options": [["o"], ["p"]]}
        path = self._write(tmp_path, [json.dumps(rec)])
        with pytest.raises(DataError, match=r":1.*label"):
            load_jsonl(path, "mcq")

    @pytest.mark.parametrize("patch,msg", [
        ({"label": 5}, "out of range"),
        ({"label": True}, "must be an integer"),
        ({"passage": "not a list"}, "passage"),
        ({"passage": []}, "passage is empty"),
        ({"options": []}, "options"),
        ({"id": ""}, "id"),
    ])
    def test_mcq_schema_violations(self, tmp_path, patch, msg):
        rec = {"id": "a", "passage": ["x"], "question": ["y"],
               "options": [["o"], ["p"]], "label": 0}
        rec.update(patch)
        path = self._write(tmp_path, [json.dumps(rec)])
        with pytest.raises(DataError, match=msg):
            load_jsonl(path, "mcq")

    @pytest.mark.parametrize("patch,msg", [
        ({"answer_end": None}, "together"),
        ({"answer_start": 3, "answer_end": 1}, "invalid"),
        ({"answer_start": 0, "answer_end": 9}, "invalid"),
        ({"answer_start": None, "answer_end": None}, "answer_start/answer_end or answer_text"),
    ])
    def test_span_schema_violations(self, tmp_path, patch, msg):
        rec = {"id": "a", "passage": ["x", "y", "z"], "question": ["q"],
               "answer_start": 0, "answer_end": 1}
        rec.update({k: v for k, v in patch.items() if v is not None})
        for k, v in patch.items():
            if v is None:
                rec.pop(k, None)
        path = self._write(tmp_path, [json.dumps(rec)])
        with pytest.raises(DataError, match=msg):
            load_jsonl(path, "span")

    def test_answer_text_only_is_valid(self, tmp_path):
        rec = {"id": "a", "passage": ["x", "y"], "question": ["q"],
               "answer_text": ["y"]}
        path = self._write(tmp_path, [json.dumps(rec)])
        insts = load_jsonl(path, "span")
        assert insts[0].start is None and insts[0].answer_text == ["y"]

    def test_blank_lines_skipped(self, tmp_path):
        rec = json.dumps({"id": "a", "passage": ["x"], "question": ["q"],
                          "answer_text": ["x"]})
        path = self._write(tmp_path, [rec, "", rec.replace('"a"', '"b"')])
        assert len(load_jsonl(path, "span")) == 2

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="no records"):
            load_jsonl(str(path), "span")

    def test_unknown_task(self, tmp_path):
        path = self._write(tmp_path, ["{}"])
        with pytest.raises(DataError, match="unknown task"):
            load_jsonl(path, "classification")


class TestTruncation:
    def test_span_cut_by_truncation_dropped(self):
        keep = SpanInstance("k", ["a"] * 10, ["q"], 2, 4, None)
        drop = SpanInstance("d", ["a"] * 10, ["q"], 4, 8, None)
        out = truncate_instances([keep, drop], max_len=6)
        assert [i.uid for i in out] == ["k"]
        assert len(out[0].passage) == 6

    def test_mcq_truncated_not_dropped(self):
        inst = McqInstance("m", ["a"] * 10, ["q"], [["x"], ["y"]], 0)
        out = truncate_instances([inst], max_len=4)
        assert len(out) == 1 and len(out[0].passage) == 4

    def test_short_passages_untouched(self):
        inst = McqInstance("m", ["a", "b"], ["q"], [["x"], ["y"]], 0)
        assert truncate_instances([inst], max_len=10) == [inst]

    def test_nonpositive_max_len_is_identity(self):
        inst = McqInstance("m", ["a"] * 10, ["q"], [["x"], ["y"]], 0)
        assert truncate_instances([inst], max_len=0) == [inst]


class TestVocabEmbeddings:
    def test_reserved_ids(self):
        v = build_vocab([["b", "a", "b"]])
        assert v.tokens[PAD_ID] == "<pad>"
        assert v.tokens[UNK_ID] == "<unk>"
        assert np.array_equal(v.encode(["a", "zzz", "<pad>"]),
                              [v.index["a"], UNK_ID, PAD_ID])

    def test_min_count_filters(self):
        v = build_vocab([["a", "a", "b"]], min_count=2)
        assert "a" in v.index and "b" not in v.index

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            Vocab(["<pad>", "<unk>", "x", "x"])

    def test_pad_row_zero_and_init_range(self):
        v = build_vocab([["a", "b", "c"]])
        emb = build_embeddings(v, Rng(0), dim=16)
        assert np.array_equal(emb.table[PAD_ID], np.zeros(16, np.float32))
        rest = emb.table[1:]
        assert np.all(rest > -0.05) and np.all(rest < 0.05)
        assert emb.frozen and emb.dim == 16

    def test_pretrained_overrides(self, tmp_path):
        v = build_vocab([["a", "b"]])
        pre = tmp_path / "vec.txt"
        pre.write_text("a 1.0 2.0 3.0\nmissing 9.0 9.0 9.0\n", encoding="utf-8")
        emb = build_embeddings(v, Rng(0), dim=3, pretrained_path=str(pre))
        assert np.allclose(emb.table[v.index["a"]], [1.0, 2.0, 3.0])
        b_row = emb.table[v.index["b"]]
        assert np.all(np.abs(b_row) < 0.05)

    def test_pretrained_width_mismatch(self, tmp_path):
        v = build_vocab([["a"]])
        pre = tmp_path / "vec.txt"
        pre.write_text("a 1.0 2.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="expected 3"):
            build_embeddings(v, Rng(0), dim=3, pretrained_path=str(pre))

    def test_pretrained_non_numeric(self, tmp_path):
        v = build_vocab([["a"]])
        pre = tmp_path / "vec.txt"
        pre.write_text("a 1.0 oops 3.0\n", encoding="utf-8")
        with pytest.raises(DataError, match="non-numeric"):
            build_embeddings(v, Rng(0), dim=3, pretrained_path=str(pre))

    def test_build_vocab_embeddings_covers_all_fields(self):
        insts = gen_mcq_synthetic(1, 3, seq_len=12, gap=4)
        vocab, emb = build_vocab_embeddings(insts, Rng(1), d_emb=4)
        for inst in insts:
            for tok in inst.passage + inst.question + sum(inst.options, []):
                assert tok in vocab.index
        assert emb.table.shape == (len(vocab), 4)


class TestMcqGenerator:
    def test_deterministic_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(gen_mcq_synthetic(7, 20, seq_len=30, gap=9), str(a))
        write_jsonl(gen_mcq_synthetic(7, 20, seq_len=30, gap=9), str(b))
        assert a.read_bytes() == b.read_bytes()
        write_jsonl(gen_mcq_synthetic(8, 20, seq_len=30, gap=9), str(b))
        assert a.read_bytes() != b.read_bytes()

    def test_structure(self):
        insts = gen_mcq_synthetic(2, 50, seq_len=30, gap=9, n_options=4)
        assert len(insts) == 50
        for inst in insts:
            assert len(inst.passage) == 30
            assert len(inst.options) == 4
            assert 0 <= inst.label < 4
            keys = [t for t in inst.passage if t.startswith("key")]
            assert len(keys) == 1
            key = keys[0]
            p = inst.passage.index(key)
            val = "val" + key[3:]
            assert inst.passage[p + 9] == val
            assert key in inst.question
            # exactly the gold option carries the paired value
            carrying = [j for j, opt in enumerate(inst.options) if val in opt]
            assert carrying == [inst.label]
            # distractor values name keys absent from the passage
            for j, opt in enumerate(inst.options):
                if j == inst.label:
                    continue
                for tok in opt:
                    if tok.startswith("val"):
                        assert "key" + tok[3:] not in inst.passage

    def test_infeasible_parameters(self):
        with pytest.raises(ValueError):
            gen_mcq_synthetic(0, 1, seq_len=10, gap=10)
        with pytest.raises(ValueError):
            gen_mcq_synthetic(0, 1, seq_len=30, gap=5, n_options=1)

    def test_uniform_predictor_chance_rate(self):
        n = 1000
        insts = gen_mcq_synthetic(3, n, seq_len=30, gap=9, n_options=4)
        r = Rng(99)
        preds = [int(r.integers(0, 4)) for _ in insts]
        acc = metric_accuracy(preds, [i.label for i in insts])
        p = 0.25
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(acc - p) <= 3 * sigma


class TestSpanGenerator:
    def test_deterministic_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_jsonl(gen_span_synthetic(5, 20, seq_len=24, gap=6), str(a))
        write_jsonl(gen_span_synthetic(5, 20, seq_len=24, gap=6), str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_structure(self):
        insts = gen_span_synthetic(6, 50, seq_len=24, gap=6, span_len=2)
        for inst in insts:
            markers = [t for t in inst.passage if t.startswith("mrk")]
            assert len(markers) == 1
            p = inst.passage.index(markers[0])
            assert inst.start == p + 6
            assert inst.end == inst.start + 1
            assert inst.end < len(inst.passage)
            assert inst.answer_text == inst.passage[inst.start:inst.end + 1]
            assert markers[0] in inst.question
            # the marker is the only question token in the passage
            overlap = set(inst.question) & set(inst.passage)
            assert overlap == {markers[0]}

    def test_infeasible_parameters(self):
        with pytest.raises(ValueError):
            gen_span_synthetic(0, 1, seq_len=10, gap=9, span_len=3)

    def test_uniform_predictor_chance_rate(self):
        n = 1000
        seq_len, span_len = 30, 3
        insts = gen_span_synthetic(7, n, seq_len=seq_len, gap=6, span_len=span_len)
        r = Rng(100)
        hits = []
        for inst in insts:
            s = int(r.integers(0, seq_len - span_len + 1))
            pred = inst.passage[s:s + span_len]
            hits.append(em_score(pred, inst.answer_text))
        em = sum(hits) / n
        p = 1.0 / (seq_len - span_len + 1)
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(em - p) <= 3 * sigma


class TestLcs:
    def test_hand_cases(self):
        assert lcs_length(list("abcde"), list("ace")) == 3
        assert lcs_length(list("abc"), list("cba")) == 1
        assert lcs_length([], list("ab")) == 0
        assert lcs_length(list("ab"), list("ab")) == 2

    def test_subsequence_not_substring(self):
        assert lcs_length(["a", "x", "b"], ["a", "b"]) == 2


class TestMetricOracles:
    def test_f1_half(self):
        assert f1_score(["x", "b"], ["b", "c"]) == 0.5

    def test_f1_identity_disjoint(self):
        assert f1_score(["cat", "sat"], ["cat", "sat"]) == 1.0
        assert f1_score(["cat"], ["dog"]) == 0.0

    def test_f1_empty_rules(self):
        assert f1_score([], []) == 1.0
        assert f1_score([], ["x"]) == 0.0
        assert f1_score(["x"], []) == 0.0

    def test_f1_multiset_overlap(self):
        # one shared "b" counted once despite a duplicate in pred
        assert np.isclose(f1_score(["b", "b"], ["b", "c"]), 0.5)

    def test_em_normalization(self):
        assert em_score(["The", "Cat"], ["cat"]) == 1.0
        assert em_score(["cat!"], ["cat"]) == 1.0
        assert em_score(["an", "apple"], ["apple"]) == 1.0
        assert em_score(["cat"], ["dog"]) == 0.0
        assert em_score([], []) == 1.0

    def test_bleu1_brevity_oracle(self):
        got = bleu_score(["a", "b"], ["a", "b", "c", "d"], max_n=1)
        assert np.isclose(got, math.exp(-1.0), atol=1e-9)

    def test_bleu_identity_and_disjoint(self):
        assert np.isclose(bleu_score(list("abcd"), list("abcd")), 1.0, atol=1e-6)
        assert bleu_score(list("abcd"), list("wxyz")) < 1e-6
        assert bleu_score([], ["a"]) == 0.0

    def test_bleu_no_brevity_penalty_when_longer(self):
        got = bleu_score(["a", "b", "c"], ["a", "b"], max_n=1)
        assert np.isclose(got, 2.0 / 3.0, atol=1e-6)

    def test_rouge_six_sevenths(self):
        got = rouge_l_score(["a", "c", "d"], ["a", "b", "c", "d"])
        assert np.isclose(got, 6.0 / 7.0, atol=1e-12)

    def test_rouge_identity_disjoint_empty(self):
        assert rouge_l_score(["x", "y"], ["x", "y"]) == 1.0
        assert rouge_l_score(["x"], ["y"]) == 0.0
        assert rouge_l_score([], []) == 1.0
        assert rouge_l_score([], ["x"]) == 0.0

    def test_metrics_bounded_and_self_scoring(self):
        rng = Rng(8)
        vocab = [f"t{i}" for i in range(12)]
        for _ in range(100):
            a = [vocab[int(j)] for j in rng.integers(0, 12, size=int(rng.integers(1, 9)))]
            b = [vocab[int(j)] for j in rng.integers(0, 12, size=int(rng.integers(1, 9)))]
            for fn in (f1_score, bleu_score, rouge_l_score):
                s = fn(a, b)
                assert 0.0 <= s <= 1.0 + 1e-12
            assert f1_score(a, a) == 1.0
            assert rouge_l_score(a, a) == 1.0

    def test_corpus_means_and_order_independence(self):
        preds = [["a"], ["b"], ["c"]]
        golds = [["a"], ["x"], ["c"]]
        assert np.isclose(metric_em(preds, golds), 2.0 / 3.0)
        assert metric_f1(preds, golds) == metric_f1(preds[::-1], golds[::-1])
        assert np.isclose(metric_rouge_l(preds, golds), 2.0 / 3.0)
        assert np.isclose(metric_bleu(preds, golds, max_n=1), 2.0 / 3.0, atol=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metric_em([["a"]], [])
        with pytest.raises(ValueError):
            metric_accuracy([1], [1, 2])


class TestRougeBestSpan:
    def _brute(self, passage, ref, max_len):
        best = (0.0, 0, 0, True)
        for s in range(len(passage)):
            for e in range(s, min(s + max_len, len(passage))):
                sc = rouge_l_score(passage[s:e + 1], ref)
                if sc > best[0]:
                    best = (sc, s, e, False)
        return best[1], best[2], best[0], best[3]

    def test_verbatim_reference_found(self):
        passage = "w1 w2 the quick fox w3 w4".split()
        ref = ["quick", "fox"]
        got = rouge_l_best_span(passage, ref, max_len=5)
        assert (got.start, got.end) == (3, 4)
        assert got.score == 1.0 and not got.degenerate

    def test_matches_brute_force(self):
        rng = Rng(9)
        vocab = [f"w{i}" for i in range(10)]
        for _ in range(100):
            ell = int(rng.integers(1, 20))
            passage = [vocab[int(j)] for j in rng.integers(0, 10, size=ell)]
            ref = [vocab[int(j)] for j in rng.integers(0, 10, size=int(rng.integers(1, 5)))]
            max_len = int(rng.integers(1, 8))
            got = rouge_l_best_span(passage, ref, max_len)
            want = self._brute(passage, ref, max_len)
            assert (got.start, got.end, got.degenerate) == (want[0], want[1], want[3])
            assert np.isclose(got.score, want[2], atol=1e-12)

    def test_degenerate_flag(self):
        got = rouge_l_best_span(["x", "y"], ["z"], max_len=2)
        assert got.degenerate and got.score == 0.0 and (got.start, got.end) == (0, 0)

    def test_tie_prefers_earliest_then_shortest(self):
        got = rouge_l_best_span(["a", "b", "a"], ["a"], max_len=3)
        assert (got.start, got.end) == (0, 0)

    def test_max_len_one(self):
        got = rouge_l_best_span(["x", "b", "y"], ["b"], max_len=1)
        assert (got.start, got.end) == (1, 1)

    def test_empty_passage_rejected(self):
        with pytest.raises(ValueError):
            rouge_l_best_span([], ["a"])
