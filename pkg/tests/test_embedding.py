"""Cosine similarity, providers, and the embedding store format."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faithdec.core import VocabInfo
from faithdec.embedding import (
    BagOfWordsOracle,
    FileEmbeddingStore,
    clap_score_at,
    clap_score_tt,
    cosine_similarity,
    load_embedding_store,
)
from faithdec.errors import (
    DimensionMismatchError,
    FormatError,
    MissingEmbeddingError,
    ZeroVectorError,
)

from conftest import oracle_bow_tt


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        assert cosine_similarity((0.3, -0.4, 1.2), (0.3, -0.4, 1.2)) == 1.0

    def test_orthogonal_is_zero(self):
        assert cosine_similarity((1.0, 0.0), (0.0, 1.0)) == 0.0

    def test_hand_value_inverse_sqrt_two(self):
        assert abs(cosine_similarity((1.0, 1.0), (1.0, 0.0)) - 1 / math.sqrt(2)) <= 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity((1.0, 0.0), (1.0, 0.0, 0.0))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity((0.0, 0.0), (1.0, 0.0))

    def test_non_finite_rejected(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity((float("nan"), 1.0), (1.0, 0.0))

    def test_symmetry_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            dim = int(rng.integers(2, 12))
            x = rng.normal(size=dim)
            y = rng.normal(size=dim)
            assert cosine_similarity(x, y) == cosine_similarity(y, x)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            dim = int(rng.integers(2, 12))
            x = rng.normal(size=dim)
            y = rng.normal(size=dim)
            base = cosine_similarity(x, y)
            for c in (1e-3, 1.0, 1e3):
                assert abs(cosine_similarity(c * x, y) - base) <= 1e-6

    def test_bounds_always_hold(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            dim = int(rng.integers(2, 8))
            x = rng.normal(size=dim) * 10.0 ** int(rng.integers(-3, 4))
            y = rng.normal(size=dim) * 10.0 ** int(rng.integers(-3, 4))
            assert -1.0 <= cosine_similarity(x, y) <= 1.0


@pytest.fixture
def word_vocab():
    return VocabInfo(
        vocab_size=5,
        bos_id=0,
        eos_id=1,
        token_strings=("<s>", "</s>", "rain", "wind", "birds"),
    )


@pytest.fixture
def bow(word_vocab):
    return BagOfWordsOracle(
        word_vocab,
        audio_map={"c": (0.0, 0.0, 1.0, 0.0, 0.0)},
    )


class TestClapScores:
    def test_aligned_basis_is_one(self, bow):
        assert clap_score_at(bow, "rain", "c") == 1.0

    def test_orthogonal_basis_is_zero(self, bow):
        assert clap_score_at(bow, "wind", "c") == 0.0

    def test_two_token_text_hand_value(self, bow):
        got = clap_score_at(bow, "rain wind", "c")
        assert abs(got - 1 / math.sqrt(2)) <= 1e-8

    def test_text_is_normalized_before_embedding(self, bow):
        assert clap_score_at(bow, "  RAIN ", "c") == 1.0

    def test_missing_audio_is_loud(self, bow):
        with pytest.raises(MissingEmbeddingError):
            clap_score_at(bow, "rain", "nope")

    def test_tt_identical_texts(self, bow):
        assert clap_score_tt(bow, "wind birds", "wind birds") == 1.0

    def test_tt_disjoint_texts(self, bow):
        assert clap_score_tt(bow, "rain", "wind") == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_tt_matches_brute_force_counter_exactly(self, data):
        vocab = VocabInfo(
            vocab_size=5,
            bos_id=0,
            eos_id=1,
            token_strings=("<s>", "</s>", "rain", "wind", "birds"),
        )
        words = ["rain", "wind", "birds"]
        text_a = " ".join(data.draw(st.lists(st.sampled_from(words), min_size=1, max_size=6)))
        text_b = " ".join(data.draw(st.lists(st.sampled_from(words), min_size=1, max_size=6)))
        bow = BagOfWordsOracle(vocab, audio_map={})
        assert clap_score_tt(bow, text_a, text_b) == oracle_bow_tt(vocab, text_a, text_b)

    def test_unknown_words_embed_to_zero_and_fail_loudly(self, bow):
        with pytest.raises(ZeroVectorError):
            clap_score_tt(bow, "thunder", "rain")


STORE_LINES = [
    "dim 4",
    "text 0 0 1 0 | rain",
    "text 0 0 0 1 | Wind  Gusts",
    "audio clip1 0 0 0 1",
]


class TestEmbeddingStore:
    def write(self, tmp_path, lines):
        p = tmp_path / "store.txt"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(p)

    def test_roundtrip_sizes(self, tmp_path):
        store = load_embedding_store(self.write(tmp_path, STORE_LINES))
        assert store.dim == 4
        assert len(store) == 3
        np.testing.assert_array_equal(store.embed_audio("clip1"), [0, 0, 0, 1])

    def test_text_keys_are_normalized(self, tmp_path):
        store = load_embedding_store(self.write(tmp_path, STORE_LINES))
        np.testing.assert_array_equal(store.embed_text("wind gusts"), [0, 0, 0, 1])
        np.testing.assert_array_equal(store.embed_text(" WIND   GUSTS "), [0, 0, 0, 1])

    def test_wrong_length_entry(self, tmp_path):
        lines = STORE_LINES + ["text 1 0 | short"]
        with pytest.raises(FormatError) as err:
            load_embedding_store(self.write(tmp_path, lines))
        assert err.value.line == 5

    def test_duplicate_key_names_it(self, tmp_path):
        lines = STORE_LINES + ["text 0 1 0 0 | RAIN"]
        with pytest.raises(FormatError) as err:
            load_embedding_store(self.write(tmp_path, lines))
        assert "rain" in str(err.value)

    def test_all_zero_vector_rejected(self, tmp_path):
        lines = STORE_LINES + ["audio clip2 0 0 0 0"]
        with pytest.raises(ZeroVectorError):
            load_embedding_store(self.write(tmp_path, lines))

    def test_missing_text_is_loud(self, tmp_path):
        store = load_embedding_store(self.write(tmp_path, STORE_LINES))
        with pytest.raises(MissingEmbeddingError):
            store.embed_text("never stored")

    def test_constructor_rejects_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            FileEmbeddingStore(dim=3, text_map={"a": (1.0, 0.0)}, audio_map={})
