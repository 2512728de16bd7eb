from __future__ import annotations

import random
import string

import pytest

from popgate.errors import IndexFormatError, ValidationError
from popgate.retriever import (
    Bm25Index,
    Passage,
    build_index,
    load_index,
    recall_at_k,
    save_index,
    tokenize,
)

from oracles import bm25_ranking, brute_force_bm25


def random_corpus(
    rng: random.Random, n_docs: int, vocab_size: int = 25
) -> tuple[list[Passage], list[str]]:
    vocab = ["".join(rng.choices(string.ascii_lowercase, k=rng.randint(2, 6))) for _ in range(vocab_size)]
    passages = []
    for i in range(n_docs):
        words = rng.choices(vocab, k=rng.randint(1, 12))
        passages.append(Passage(doc_id=f"d{i:03d}", title=f"Doc {i}", text=" ".join(words)))
    return passages, vocab


class TestTokenize:
    def test_lowercases_and_splits_on_nonword(self):
        assert tokenize("Ada's 2nd-best friend!") == ["ada", "s", "2nd", "best", "friend"]

    def test_underscore_is_a_separator(self):
        assert tokenize("foo_bar") == ["foo", "bar"]

    def test_unicode_letters_kept(self):
        assert tokenize("Zijah Sokolović") == ["zijah", "sokolović"]


class TestBuildIndex:
    def test_counting_example(self):
        index = build_index([Passage("d1", "t", "a b a")])
        assert index.doc_lengths == {"d1": 3}
        assert index.postings["a"] == [("d1", 2)]
        assert index.postings["b"] == [("d1", 1)]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValidationError):
            build_index([])

    def test_duplicate_doc_id_rejected(self):
        passages = [Passage("d1", "t", "x"), Passage("d1", "t", "y")]
        with pytest.raises(ValidationError, match="d1"):
            build_index(passages)

    def test_avg_doc_length_is_mean(self):
        passages = [
            Passage("d1", "t", "a b"),
            Passage("d2", "t", "a b c"),
            Passage("d3", "t", "a"),
        ]
        assert build_index(passages).avg_doc_length == pytest.approx(2.0)

    def test_empty_text_rejected(self):
        with pytest.raises(ValidationError):
            Passage("d1", "t", "")


class TestSearch:
    def toy_index(self) -> Bm25Index:
        return build_index(
            [
                Passage("d1", "", "cat sat"),
                Passage("d2", "", "cat cat mat"),
                Passage("d3", "", "dog"),
            ],
            k1=1.2,
            b=0.75,
        )

    def test_toy_ranking_matches_oracle(self):
        index = self.toy_index()
        hits = index.search("cat", k=3)
        assert [h.doc_id for h in hits] == ["d2", "d1"]
        expected = brute_force_bm25(list(index.passages.values()), "cat", 1.2, 0.75)
        for hit in hits:
            assert abs(hit.score - expected[hit.doc_id]) <= 1e-9

    def test_absent_term_returns_empty(self):
        assert self.toy_index().search("bird", k=5) == []

    def test_k_larger_than_matches(self):
        hits = self.toy_index().search("dog", k=10)
        assert [h.doc_id for h in hits] == ["d3"]

    def test_empty_query_returns_empty(self):
        assert self.toy_index().search("...", k=3) == []

    def test_ranks_are_contiguous_from_one(self):
        hits = self.toy_index().search("cat mat dog", k=3)
        assert [h.rank for h in hits] == list(range(1, len(hits) + 1))

    def test_deterministic(self):
        a = self.toy_index().search("cat mat", k=3)
        b = self.toy_index().search("cat mat", k=3)
        assert a == b

    def test_tie_broken_by_ascending_doc_id(self):
        index = build_index(
            [Passage("d2", "", "cat"), Passage("d1", "", "cat"), Passage("d3", "", "dog")]
        )
        hits = index.search("cat", k=2)
        assert [h.doc_id for h in hits] == ["d1", "d2"]

    def test_matches_brute_force_on_random_corpora(self):
        rng = random.Random(1234)
        for _ in range(10):
            passages, vocab = random_corpus(rng, rng.randint(2, 100))
            index = build_index(passages, k1=1.2, b=0.75)
            for _ in range(5):
                query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
                hits = index.search(query, k=len(passages))
                expected = brute_force_bm25(passages, query, 1.2, 0.75)
                assert {h.doc_id for h in hits} == set(expected)
                for hit in hits:
                    assert abs(hit.score - expected[hit.doc_id]) <= 1e-9
                assert [h.doc_id for h in hits] == bm25_ranking(passages, query, 1.2, 0.75)

    def test_new_doc_without_query_terms_never_becomes_a_hit(self):
        # Adding a document does shift BM25 scores (N and avgdl change), but it
        # must never enter the hit list nor evict a matching document.
        passages = [Passage("d1", "", "cat sat"), Passage("d2", "", "cat cat mat")]
        before = {h.doc_id for h in build_index(passages).search("cat", k=10)}
        grown = passages + [Passage("d9", "", "zebra lion")]
        after = {h.doc_id for h in build_index(grown).search("cat", k=10)}
        assert before == after


class TestRecallAtK:
    def test_gold_inside_top1_text(self):
        passages = {
            "d1": Passage(
                "d1",
                "The Cocoanuts",
                "Produced for Paramount Pictures by Walter Wanger, who is not credited.",
            )
        }
        index = build_index(list(passages.values()))
        hits = index.search("Who was the producer of The Cocoanuts?", k=1)
        assert recall_at_k(hits, passages, {"Walter Wanger"}, k=1) is True

    def test_empty_hits_false(self):
        assert recall_at_k([], {}, {"X"}, k=1) is False

    def test_gold_only_in_rank_two_with_k_one(self):
        passages = [
            Passage("d1", "", "cat cat cat answer-less text"),
            Passage("d2", "", "cat with Walter Wanger inside"),
        ]
        index = build_index(passages)
        hits = index.search("cat", k=2)
        assert hits[0].doc_id == "d1"
        assert recall_at_k(hits, index.passages, {"Walter Wanger"}, k=1) is False
        assert recall_at_k(hits, index.passages, {"Walter Wanger"}, k=2) is True

    def test_match_uses_normalization(self):
        from popgate.retriever import SearchHit

        passages = {"d1": Passage("d1", "", "by  WALTER   WANGER, uncredited")}
        hits = [SearchHit("d1", 1.0, 1)]
        assert recall_at_k(hits, passages, {"Walter Wanger"}, k=1) is True


class TestSerialization:
    def test_round_trip_identical_results(self, tmp_path):
        rng = random.Random(7)
        passages, vocab = random_corpus(rng, 40)
        index = build_index(passages, k1=1.4, b=0.6)
        path = tmp_path / "corpus.pgidx"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.k1 == index.k1 and loaded.b == index.b
        for _ in range(10):
            query = " ".join(rng.choices(vocab, k=2))
            assert loaded.search(query, k=10) == index.search(query, k=10)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pgidx"
        path.write_bytes(b"NOTANINDEX")
        with pytest.raises(IndexFormatError, match="magic"):
            load_index(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "v9.pgidx"
        path.write_bytes(b"PGIDX\x09{}")
        with pytest.raises(IndexFormatError, match="version"):
            load_index(path)
