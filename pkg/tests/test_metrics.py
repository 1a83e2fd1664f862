"""Metrics: BLEU-1/ROUGE-L against brute-force oracles, split reports."""

import json
import math

import numpy as np
import pytest

from faithdec.core import VocabInfo
from faithdec.embedding import BagOfWordsOracle, FileEmbeddingStore
from faithdec.errors import MissingEmbeddingError, PreconditionError
from faithdec.metrics import (
    EvalInstance,
    bleu1,
    clapscore_tt_metric,
    evaluate,
    format_report_table,
    rouge_l,
    split_report,
)
from faithdec.metrics import _lcs_length

from conftest import oracle_bleu1, oracle_lcs


class TestBleu1:
    def test_two_of_three_unigrams(self):
        inst = EvalInstance("c", "a b c", ("a b d",))
        assert abs(bleu1([inst]) - 2 / 3) <= 1e-12

    def test_identical_is_exactly_one(self):
        inst = EvalInstance("c", "a b c", ("a b c",))
        assert bleu1([inst]) == 1.0

    def test_brevity_penalty_hand_value(self):
        inst = EvalInstance("c", "a", ("a b c d",))
        assert abs(bleu1([inst]) - math.exp(1 - 4)) <= 1e-12

    def test_empty_candidate_contributes_zero_counts(self):
        insts = [
            EvalInstance("c1", "", ("a b",)),
            EvalInstance("c2", "a b", ("a b",)),
        ]
        # 2 matches of 2 tokens, brevity over lengths 2 vs 4
        assert bleu1(insts) == 1.0 * math.exp(1 - 4 / 2)

    def test_clipping_uses_max_reference_count(self):
        # clipped matches min(3, 2) = 2; closest ref length 2 < 3, so BP = 1
        inst = EvalInstance("c", "a a a", ("a", "a a"))
        assert abs(bleu1([inst]) - 2 / 3) <= 1e-12

    def test_matches_brute_force_on_random_corpora(self):
        rng = np.random.default_rng(5)
        words = list("abcdef")
        for _ in range(300):
            instances = []
            for i in range(int(rng.integers(1, 5))):
                cand = " ".join(rng.choice(words, size=rng.integers(0, 7)))
                refs = tuple(
                    " ".join(rng.choice(words, size=rng.integers(1, 7)))
                    for _ in range(int(rng.integers(1, 4)))
                )
                instances.append(EvalInstance(f"i{i}", cand, refs))
            assert bleu1(instances) == oracle_bleu1(instances)

    def test_order_permutation_invariant(self):
        insts = [
            EvalInstance("c1", "a b", ("a b c",)),
            EvalInstance("c2", "d", ("d e",)),
            EvalInstance("c3", "f f", ("f",)),
        ]
        assert bleu1(insts) == bleu1(list(reversed(insts)))

    def test_requires_instances(self):
        with pytest.raises(PreconditionError):
            bleu1([])


class TestRougeL:
    def test_identical_is_one(self):
        assert rouge_l([EvalInstance("c", "a b c", ("a b c",))]) == 1.0

    def test_hand_value(self):
        inst = EvalInstance("c", "a b c d", ("a c d",))
        expected = (1 + 1.44) * 0.75 * 1.0 / (1.0 + 1.44 * 0.75)
        assert abs(rouge_l([inst]) - expected) <= 1e-12
        assert abs(expected - 0.8798) <= 1e-4

    def test_disjoint_tokens_zero(self):
        assert rouge_l([EvalInstance("c", "a b", ("c d",))]) == 0.0

    def test_lcs_matches_recursive_oracle(self):
        rng = np.random.default_rng(6)
        words = tuple("abcd")
        for _ in range(400):
            a = tuple(rng.choice(words, size=rng.integers(0, 8)))
            b = tuple(rng.choice(words, size=rng.integers(0, 8)))
            assert _lcs_length(a, b) == oracle_lcs(a, b)

    def test_max_over_references(self):
        inst = EvalInstance("c", "a b c", ("z z", "a b c"))
        assert rouge_l([inst]) == 1.0

    def test_corpus_is_mean_of_instances(self):
        i1 = EvalInstance("c1", "a b", ("a b",))
        i2 = EvalInstance("c2", "a", ("b",))
        assert rouge_l([i1, i2]) == (1.0 + 0.0) / 2

    def test_order_permutation_invariant(self):
        insts = [
            EvalInstance("c1", "a b c", ("a c",)),
            EvalInstance("c2", "d e", ("d e f",)),
        ]
        assert rouge_l(insts) == rouge_l(list(reversed(insts)))


VOCAB = VocabInfo(
    vocab_size=6,
    bos_id=0,
    eos_id=1,
    token_strings=("<s>", "</s>", "a", "b", "x", "y"),
)


def bow() -> BagOfWordsOracle:
    return BagOfWordsOracle(VOCAB, audio_map={})


class TestClapscoreMetric:
    def test_candidate_equals_a_reference(self):
        insts = [
            EvalInstance("c1", "a b", ("x y", "a b")),
            EvalInstance("c2", "x", ("x",)),
        ]
        assert clapscore_tt_metric(bow(), insts) == 1.0

    def test_disjoint_candidate_scores_zero(self):
        insts = [EvalInstance("c", "a", ("b", "x"))]
        assert clapscore_tt_metric(bow(), insts) == 0.0

    def test_mean_of_per_instance_scores(self):
        insts = [
            EvalInstance("c1", "a", ("a",)),
            EvalInstance("c2", "a", ("b",)),
        ]
        assert clapscore_tt_metric(bow(), insts) == 0.5

    def test_mean_reduce_mode(self):
        insts = [EvalInstance("c", "a", ("a", "b"))]
        assert clapscore_tt_metric(bow(), insts, reduce="mean") == 0.5

    def test_missing_embedding_loud_by_default(self):
        store = FileEmbeddingStore(dim=2, text_map={"a": (1.0, 0.0)}, audio_map={})
        insts = [EvalInstance("c", "a", ("a",)), EvalInstance("c2", "unseen", ("a",))]
        with pytest.raises(MissingEmbeddingError):
            clapscore_tt_metric(store, insts)

    def test_missing_embedding_excluded_with_flag(self):
        store = FileEmbeddingStore(dim=2, text_map={"a": (1.0, 0.0)}, audio_map={})
        insts = [EvalInstance("c", "a", ("a",)), EvalInstance("c2", "unseen", ("a",))]
        assert clapscore_tt_metric(store, insts, skip_missing=True) == 1.0


def make_split_fixture():
    """Clean candidates repeat a reference; hallucinated ones share half
    their tokens, so the bag-of-words gap is 1.0 - 0.5 by construction."""
    refs = ("a b x y",)
    clean = [EvalInstance(f"cl{i}", "a b x y", refs) for i in range(4)]
    hallucinated = []
    for i in range(4):
        hallucinated.append(EvalInstance(f"h{i}", "a b a b", refs))
    return hallucinated, clean


class TestSplitReport:
    def test_clean_scores_higher_than_hallucinated(self):
        hallucinated, clean = make_split_fixture()
        cmp_ = split_report(hallucinated, clean, bow())
        assert cmp_.non_hallucinated.corpus["clapscore_tt"] == 1.0
        got = cmp_.hallucinated.corpus["clapscore_tt"]
        # count vectors (2,2,0,0) vs (1,1,1,1): cos = 4 / (sqrt(8) * 2)
        assert abs(got - 4 / (math.sqrt(8.0) * 2.0)) <= 1e-12
        assert cmp_.deltas["clapscore_tt"] > 0.2

    def test_identical_splits_zero_deltas(self):
        _, clean = make_split_fixture()
        cmp_ = split_report(clean, clean, bow())
        assert all(d == 0.0 for d in cmp_.deltas.values())

    def test_requires_non_empty_splits(self):
        _, clean = make_split_fixture()
        with pytest.raises(PreconditionError):
            split_report([], clean, bow())

    def test_corpus_clap_is_mean_of_max_over_references(self):
        hallucinated, clean = make_split_fixture()
        report = evaluate(hallucinated + clean, bow())
        per_instance = [row.scores["clapscore_tt"] for row in report.instances]
        assert report.corpus["clapscore_tt"] == math.fsum(per_instance) / len(per_instance)


class TestReportOutput:
    def test_json_shape(self):
        report = evaluate([EvalInstance("c", "a b", ("a b",))], bow(), split="none")
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["split"] == "none"
        assert set(payload["corpus"]) == {"bleu1", "rouge_l", "clapscore_tt"}
        assert payload["instances"][0]["context_id"] == "c"
        assert set(payload["instances"][0]["scores"]) == {"bleu1", "rouge_l", "clapscore_tt"}

    def test_table_mirror_lists_all_metrics(self):
        report = evaluate([EvalInstance("c", "a b", ("a b",))], bow(), split="demo")
        table = format_report_table([report])
        assert "demo" in table and "bleu1" in table and "clapscore_tt" in table
        assert "1.0000" in table
