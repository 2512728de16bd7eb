"""Build entity-centric QA datasets from knowledge-graph triples.

Triples are deduplicated per (subject, relation), kept or dropped by a
frequency-weighted rejection rule, and verbalized through per-relation
question templates.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigError, ValidationError
from .util import read_jsonl, write_jsonl

PLACEHOLDER = "[subj]"

RELATIONS: tuple[str, ...] = (
    "occupation",
    "place of birth",
    "genre",
    "father",
    "country",
    "producer",
    "director",
    "capital of",
    "screenwriter",
    "composer",
    "color",
    "religion",
    "sport",
    "author",
    "mother",
    "capital",
)

DEFAULT_TEMPLATE_PATTERNS: dict[str, str] = {
    "occupation": "What is [subj]'s occupation?",
    "place of birth": "In what city was [subj] born?",
    "genre": "What genre is [subj]?",
    "father": "Who is the father of [subj]?",
    "country": "In what country is [subj]?",
    "producer": "Who was the producer of [subj]?",
    "director": "Who was the director of [subj]?",
    "capital of": "What is [subj] the capital of?",
    "screenwriter": "Who was the screenwriter for [subj]?",
    "composer": "Who was the composer of [subj]?",
    "color": "What color is [subj]?",
    "religion": "What is the religion of [subj]?",
    "sport": "What sport does [subj] play?",
    "author": "Who is the author of [subj]?",
    "mother": "Who is the mother of [subj]?",
    "capital": "What is the capital of [subj]?",
}

DEFAULT_PER_RELATION_CAP = 2000


@dataclass(frozen=True)
class KnowledgeTriple:
    """One (subject, relation, objects) fact with display labels and aliases."""

    subject_id: str
    subject_label: str
    subject_aliases: frozenset[str]
    relation_type: str
    object_ids: frozenset[str]
    object_labels_and_aliases: frozenset[str]

    def __post_init__(self):
        if not self.subject_label:
            raise ValidationError(f"triple {self.subject_id!r}: empty subject_label")
        if not self.relation_type:
            raise ValidationError(f"triple {self.subject_id!r}: empty relation_type")
        if not self.object_labels_and_aliases:
            raise ValidationError(
                f"triple {self.subject_id!r}/{self.relation_type!r}: no object labels"
            )


@dataclass(frozen=True)
class QuestionTemplate:
    """Question pattern with exactly one subject placeholder."""

    relation_type: str
    pattern: str

    def __post_init__(self):
        if self.pattern.count(PLACEHOLDER) != 1:
            raise ValidationError(
                f"template for {self.relation_type!r} must contain {PLACEHOLDER!r} exactly once"
            )

    def render(self, subject_label: str) -> str:
        # Plain literal substitution: a label containing the placeholder token
        # is inserted as-is, never re-expanded.
        return self.pattern.replace(PLACEHOLDER, subject_label, 1)


def default_templates() -> dict[str, QuestionTemplate]:
    return {rel: QuestionTemplate(rel, pat) for rel, pat in DEFAULT_TEMPLATE_PATTERNS.items()}


@dataclass(frozen=True)
class QAExample:
    """One question with its gold answer set and popularity annotation."""

    id: str
    question: str
    gold_answers: frozenset[str]
    subject_id: str
    subject_label: str
    relation_type: str
    popularity: int | None = None

    def __post_init__(self):
        if not self.gold_answers or any(not a.strip() for a in self.gold_answers):
            raise ValidationError(f"example {self.id!r}: empty gold answer")
        if self.popularity is not None and self.popularity < 0:
            raise ValidationError(f"example {self.id!r}: negative popularity")

    @property
    def log10_popularity(self) -> float:
        if self.popularity is None:
            raise ValidationError(f"example {self.id!r}: popularity not annotated")
        return math.log10(max(self.popularity, 1))

    def with_popularity(self, views: int) -> "QAExample":
        return replace(self, popularity=views)


def inclusion_probability(frequency: float) -> float:
    """Probability that the rejection rule keeps a triple of the given frequency."""
    if frequency < 0:
        raise ValidationError(f"negative term frequency: {frequency}")
    if frequency == 0:
        return 0.0
    return min(1.0, max(0.0, (math.log(frequency) + 6.0) / 8.0))


def sample_triples(
    triple_stream: Iterable[KnowledgeTriple],
    term_frequency: Callable[[KnowledgeTriple], float],
    per_relation_cap: int = DEFAULT_PER_RELATION_CAP,
    rng_seed: int | str = 0,
) -> list[KnowledgeTriple]:
    """Frequency-weighted rejection sampling over a triple stream.

    A triple whose subject has frequency proxy f is kept iff f > exp(8R - 6)
    with R uniform on [0, 1), i.e. with probability clamp((ln f + 6)/8, 0, 1).
    Duplicate (subject_id, relation_type) pairs are dropped before sampling,
    keeping the first occurrence. Once `per_relation_cap` triples of a relation
    have been accepted, the rest of that relation is rejected without
    consuming randomness. Output preserves input order.
    """
    if per_relation_cap <= 0:
        raise ValidationError("per_relation_cap must be positive")
    rng = random.Random(rng_seed)
    seen: set[tuple[str, str]] = set()
    accepted_per_relation: dict[str, int] = {}
    out: list[KnowledgeTriple] = []
    for triple in triple_stream:
        key = (triple.subject_id, triple.relation_type)
        if key in seen:
            continue
        seen.add(key)
        if accepted_per_relation.get(triple.relation_type, 0) >= per_relation_cap:
            continue
        f = term_frequency(triple)
        if f < 0:
            raise ValidationError(
                f"negative term frequency {f} for subject {triple.subject_label!r}"
            )
        if f > 0 and f > math.exp(8.0 * rng.random() - 6.0):
            accepted_per_relation[triple.relation_type] = (
                accepted_per_relation.get(triple.relation_type, 0) + 1
            )
            out.append(triple)
    return out


def verbalize(
    triple: KnowledgeTriple, templates: Mapping[str, QuestionTemplate]
) -> QAExample:
    """Turn a triple into a question; gold answers are all object labels and aliases."""
    template = templates.get(triple.relation_type)
    if template is None:
        raise ConfigError(f"no question template for relation {triple.relation_type!r}")
    answers = frozenset(a.strip() for a in triple.object_labels_and_aliases if a.strip())
    if not answers:
        raise ValidationError(
            f"triple {triple.subject_id!r}/{triple.relation_type!r}: only blank object labels"
        )
    return QAExample(
        id=f"{triple.subject_id}:{triple.relation_type}",
        question=template.render(triple.subject_label),
        gold_answers=answers,
        subject_id=triple.subject_id,
        subject_label=triple.subject_label,
        relation_type=triple.relation_type,
    )


def verbalize_all(
    triples: Sequence[KnowledgeTriple], templates: Mapping[str, QuestionTemplate]
) -> list[QAExample]:
    return [verbalize(t, templates) for t in triples]


def example_to_row(example: QAExample) -> dict:
    return {
        "id": example.id,
        "question": example.question,
        "answers": sorted(example.gold_answers),
        "subj": example.subject_label,
        "subj_id": example.subject_id,
        "relation": example.relation_type,
        "popularity": example.popularity,
    }


def example_from_row(row: dict) -> QAExample:
    try:
        return QAExample(
            id=row["id"],
            question=row["question"],
            gold_answers=frozenset(row["answers"]),
            subject_id=row["subj_id"],
            subject_label=row["subj"],
            relation_type=row["relation"],
            popularity=row.get("popularity"),
        )
    except KeyError as exc:
        raise ValidationError(f"dataset row missing key {exc}") from exc


def write_dataset(examples: Sequence[QAExample], path: str | Path) -> int:
    """Write examples as JSON Lines; returns the number of lines written."""
    try:
        return write_jsonl(path, (example_to_row(e) for e in examples))
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def read_dataset(path: str | Path) -> list[QAExample]:
    return [example_from_row(row) for row in read_jsonl(path)]


def triple_from_row(row: dict) -> KnowledgeTriple:
    try:
        objects = row["objects"]
        labels: set[str] = set()
        ids: set[str] = set()
        for obj in objects:
            ids.add(obj["id"])
            labels.add(obj["label"])
            labels.update(obj.get("aliases", []))
        return KnowledgeTriple(
            subject_id=row["subj_id"],
            subject_label=row["subj"],
            subject_aliases=frozenset(row.get("subj_aliases", [])),
            relation_type=row["relation"],
            object_ids=frozenset(ids),
            object_labels_and_aliases=frozenset(l for l in labels if l),
        )
    except KeyError as exc:
        raise ValidationError(f"triple row missing key {exc}") from exc


def read_triples(path: str | Path) -> list[KnowledgeTriple]:
    return [triple_from_row(row) for row in read_jsonl(path)]


def load_templates(path: str | Path) -> dict[str, QuestionTemplate]:
    """Load {relation: pattern} JSON, e.g. {"director": "Who was the director of [subj]?"}."""
    import json

    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid templates JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: templates file must be a JSON object")
    return {rel: QuestionTemplate(rel, pattern) for rel, pattern in raw.items()}


class CorpusTermFrequency:
    """Frequency proxy counting exact alias matches in a reference text corpus.

    A match is the alias surrounded by non-word characters (or string edges);
    the count is summed over the subject label and all aliases. Counts are
    memoized per subject id.
    """

    def __init__(self, corpus_text: str):
        self._text = corpus_text
        self._cache: dict[str, int] = {}

    def __call__(self, triple: KnowledgeTriple) -> float:
        cached = self._cache.get(triple.subject_id)
        if cached is not None:
            return float(cached)
        total = 0
        for alias in {triple.subject_label, *triple.subject_aliases}:
            if not alias:
                continue
            pattern = rf"(?<!\w){re.escape(alias)}(?!\w)"
            total += len(re.findall(pattern, self._text))
        self._cache[triple.subject_id] = total
        return float(total)
