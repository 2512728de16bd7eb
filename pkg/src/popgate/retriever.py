"""Okapi BM25 lexical retrieval over a paragraph corpus.

Tokenization is lowercase Unicode letter/digit runs (no stemming, no stopword
removal) so that rankings are reproducible across environments. Ranking ties
are broken by ascending doc_id to keep top-1 deterministic.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import IndexFormatError, ValidationError
from .evaluation import normalize_text
from .util import atomic_write_bytes, dumps_stable, read_jsonl, write_jsonl

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

INDEX_MAGIC = b"PGIDX"
INDEX_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of Unicode letters and digits."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    doc_id: str
    title: str
    text: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValidationError("passage with empty doc_id")
        if not self.text:
            raise ValidationError(f"passage {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


class Bm25Index:
    """Inverted index with Okapi BM25 scoring.

    IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which is strictly positive,
    so every document containing a query term scores above zero and all others
    are omitted from results.
    """

    def __init__(self, passages: Sequence[Passage], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if not passages:
            raise ValidationError("cannot index an empty passage list")
        if k1 < 0 or not 0 <= b <= 1:
            raise ValidationError(f"bad BM25 parameters k1={k1}, b={b}")
        self.k1 = k1
        self.b = b
        self.passages: dict[str, Passage] = {}
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self.doc_lengths: dict[str, int] = {}
        for passage in passages:
            if passage.doc_id in self.passages:
                raise ValidationError(f"duplicate doc_id {passage.doc_id!r}")
            self.passages[passage.doc_id] = passage
            tokens = tokenize(passage.text)
            self.doc_lengths[passage.doc_id] = len(tokens)
            counts: dict[str, int] = {}
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
            for tok, tf in counts.items():
                self.postings.setdefault(tok, []).append((passage.doc_id, tf))
        self.doc_count = len(self.passages)
        self.avg_doc_length = sum(self.doc_lengths.values()) / self.doc_count

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def search(self, query: str, k: int = 1) -> list[SearchHit]:
        """Top-k passages by BM25 score; ties broken by ascending doc_id."""
        if k <= 0:
            raise ValidationError("k must be positive")
        scores: dict[str, float] = {}
        for term in tokenize(query):
            postings = self.postings.get(term)
            if not postings:
                continue
            idf = self.idf(term)
            for doc_id, tf in postings:
                dl = self.doc_lengths[doc_id]
                denom = tf + self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_length)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (self.k1 + 1.0) / denom
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        return [
            SearchHit(doc_id=doc_id, score=score, rank=rank)
            for rank, (doc_id, score) in enumerate(ranked, start=1)
        ]


def build_index(
    passages: Sequence[Passage], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> Bm25Index:
    return Bm25Index(passages, k1=k1, b=b)


def recall_at_k(
    hits: Sequence[SearchHit],
    passages: Mapping[str, Passage],
    gold_answers: Iterable[str],
    k: int = 1,
) -> bool:
    """True iff a normalized gold answer occurs in the title+text of a top-k hit."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    golds = [normalize_text(g) for g in gold_answers]
    golds = [g for g in golds if g]
    for hit in hits[:k]:
        passage = passages[hit.doc_id]
        haystack = normalize_text(f"{passage.title} {passage.text}")
        if any(g in haystack for g in golds):
            return True
    return False


def save_index(index: Bm25Index, path: str | Path) -> None:
    """Persist corpus and parameters; postings are rebuilt on load."""
    payload = {
        "k1": index.k1,
        "b": index.b,
        "doc_count": index.doc_count,
        "passages": [
            {"doc_id": p.doc_id, "title": p.title, "text": p.text}
            for p in index.passages.values()
        ],
    }
    blob = INDEX_MAGIC + bytes([INDEX_VERSION]) + dumps_stable(payload).encode("utf-8")
    atomic_write_bytes(path, blob)


def load_index(path: str | Path) -> Bm25Index:
    import json

    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(INDEX_MAGIC):
        raise IndexFormatError(f"{path}: not an index file (bad magic header)")
    version = blob[len(INDEX_MAGIC)]
    if version != INDEX_VERSION:
        raise IndexFormatError(f"{path}: unsupported index version {version}")
    payload = json.loads(blob[len(INDEX_MAGIC) + 1 :].decode("utf-8"))
    passages = [Passage(**row) for row in payload["passages"]]
    index = Bm25Index(passages, k1=payload["k1"], b=payload["b"])
    if index.doc_count != payload["doc_count"]:
        raise IndexFormatError(f"{path}: doc count mismatch")
    return index


def read_corpus(path: str | Path) -> list[Passage]:
    passages = []
    for row in read_jsonl(path):
        try:
            passages.append(Passage(doc_id=row["doc_id"], title=row["title"], text=row["text"]))
        except KeyError as exc:
            raise ValidationError(f"corpus row missing key {exc}") from exc
    return passages


def write_corpus(passages: Sequence[Passage], path: str | Path) -> int:
    return write_jsonl(
        path, ({"doc_id": p.doc_id, "title": p.title, "text": p.text} for p in passages)
    )
