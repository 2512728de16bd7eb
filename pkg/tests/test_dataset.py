from __future__ import annotations

import math

import pytest

from popgate.dataset import (
    CorpusTermFrequency,
    KnowledgeTriple,
    QuestionTemplate,
    RELATIONS,
    default_templates,
    inclusion_probability,
    read_dataset,
    sample_triples,
    verbalize,
    write_dataset,
)
from popgate.errors import ConfigError, ValidationError

from conftest import make_triple
from oracles import sampling_probability


class TestSampling:
    def test_frequency_above_ceiling_always_included(self):
        triples = [make_triple(i) for i in range(5000)]
        kept = sample_triples(triples, lambda t: math.e**2, per_relation_cap=10**9, rng_seed=3)
        assert len(kept) == len(triples)

    def test_frequency_at_floor_never_included(self):
        triples = [make_triple(i) for i in range(5000)]
        kept = sample_triples(triples, lambda t: math.e**-6, per_relation_cap=10**9, rng_seed=3)
        assert kept == []

    def test_zero_frequency_excluded_without_error(self):
        kept = sample_triples([make_triple(0)], lambda t: 0.0, rng_seed=1)
        assert kept == []

    def test_negative_frequency_rejected(self):
        with pytest.raises(ValidationError):
            sample_triples([make_triple(0)], lambda t: -1.0, rng_seed=1)

    def test_unit_frequency_rate_near_three_quarters(self):
        n = 20000
        triples = [make_triple(i) for i in range(n)]
        kept = sample_triples(triples, lambda t: 1.0, per_relation_cap=10**9, rng_seed=11)
        p = sampling_probability(1.0)
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(len(kept) / n - p) <= 3 * sigma

    def test_per_relation_cap(self):
        triples = [make_triple(i, relation="director") for i in range(50)]
        triples += [make_triple(i + 50, relation="genre") for i in range(50)]
        kept = sample_triples(triples, lambda t: math.e**2, per_relation_cap=10, rng_seed=0)
        by_rel = {}
        for t in kept:
            by_rel[t.relation_type] = by_rel.get(t.relation_type, 0) + 1
        assert by_rel == {"director": 10, "genre": 10}

    def test_order_preserved_and_deterministic(self):
        triples = [make_triple(i) for i in range(200)]
        kept_a = sample_triples(triples, lambda t: 1.0, rng_seed=5)
        kept_b = sample_triples(triples, lambda t: 1.0, rng_seed=5)
        assert kept_a == kept_b
        ids = [t.subject_id for t in kept_a]
        assert ids == sorted(ids)

    def test_duplicate_subject_relation_deduplicated_keeping_first(self):
        first = make_triple(1, objects=("Alpha",))
        second = make_triple(1, objects=("Beta",))
        kept = sample_triples([first, second], lambda t: math.e**2, rng_seed=0)
        assert kept == [first]

    def test_inclusion_probability_closed_form(self):
        for f in (0.0, math.e**-6, 0.5, 1.0, math.e, math.e**2, 100.0):
            assert inclusion_probability(f) == pytest.approx(sampling_probability(f), abs=1e-12)


class TestVerbalize:
    def test_director_question(self):
        triple = KnowledgeTriple(
            subject_id="Q1",
            subject_label="Black",
            subject_aliases=frozenset({"Black"}),
            relation_type="director",
            object_ids=frozenset({"Q2"}),
            object_labels_and_aliases=frozenset({"Sanjay Leela Bhansali"}),
        )
        example = verbalize(triple, default_templates())
        assert example.question == "Who was the director of Black?"
        assert "Sanjay Leela Bhansali" in example.gold_answers

    def test_country_question(self):
        triple = KnowledgeTriple(
            subject_id="Q3",
            subject_label="Pierre",
            subject_aliases=frozenset({"Pierre"}),
            relation_type="country",
            object_ids=frozenset({"Q4"}),
            object_labels_and_aliases=frozenset({"United States"}),
        )
        assert verbalize(triple, default_templates()).question == "In what country is Pierre?"

    def test_multi_object_answers_unioned(self):
        triple = make_triple(9, objects=("Alice Smith", "A. Smith", "Bob Jones"))
        example = verbalize(triple, default_templates())
        assert example.gold_answers == frozenset({"Alice Smith", "A. Smith", "Bob Jones"})

    def test_missing_template_names_relation(self):
        triple = make_triple(1, relation="director")
        with pytest.raises(ConfigError, match="director"):
            verbalize(triple, {})

    def test_pure_function(self):
        triple = make_triple(4)
        templates = default_templates()
        assert verbalize(triple, templates) == verbalize(triple, templates)

    def test_placeholder_in_label_substituted_literally(self):
        template = QuestionTemplate("director", "Who was the director of [subj]?")
        triple = KnowledgeTriple(
            subject_id="Q9",
            subject_label="[subj]",
            subject_aliases=frozenset(),
            relation_type="director",
            object_ids=frozenset({"Q2"}),
            object_labels_and_aliases=frozenset({"X"}),
        )
        example = verbalize(triple, {"director": template})
        assert example.question == "Who was the director of [subj]?"

    def test_all_sixteen_templates_well_formed(self):
        templates = default_templates()
        assert set(templates) == set(RELATIONS)
        for template in templates.values():
            assert template.pattern.count("[subj]") == 1
            assert template.render("Foo").endswith("?")

    def test_template_requires_single_placeholder(self):
        with pytest.raises(ValidationError):
            QuestionTemplate("director", "Who directed it?")
        with pytest.raises(ValidationError):
            QuestionTemplate("director", "[subj] directed [subj]?")


class TestDatasetIO:
    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        assert write_dataset([], path) == 0
        assert path.read_text() == ""
        assert read_dataset(path) == []

    def test_round_trip(self, tmp_path):
        examples = [
            verbalize(make_triple(i, relation=rel), default_templates())
            for i, rel in enumerate(("director", "genre", "author"))
        ]
        path = tmp_path / "data.jsonl"
        assert write_dataset(examples, path) == 3
        assert read_dataset(path) == examples

    def test_quotes_survive_round_trip(self, tmp_path):
        triple = make_triple(0, objects=('He said "hi"',))
        example = verbalize(triple, default_templates())
        path = tmp_path / "data.jsonl"
        write_dataset([example], path)
        assert len(path.read_text().strip().splitlines()) == 1
        assert read_dataset(path) == [example]

    def test_same_seed_byte_identical_dataset(self, tmp_path):
        triples = [make_triple(i) for i in range(300)]
        paths = []
        for name in ("a.jsonl", "b.jsonl"):
            kept = sample_triples(triples, lambda t: 1.0, rng_seed=42)
            path = tmp_path / name
            write_dataset([verbalize(t, default_templates()) for t in kept], path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestCorpusTermFrequency:
    def test_counts_exact_alias_matches(self):
        corpus = "Ada Lovelace wrote notes. Ada Lovelace and Lovelace Ada. adalovelace."
        triple = KnowledgeTriple(
            subject_id="Q1",
            subject_label="Ada Lovelace",
            subject_aliases=frozenset({"Ada Lovelace"}),
            relation_type="occupation",
            object_ids=frozenset({"Q2"}),
            object_labels_and_aliases=frozenset({"mathematician"}),
        )
        assert CorpusTermFrequency(corpus)(triple) == 2.0

    def test_distinct_aliases_summed(self):
        corpus = "The Bard wrote plays. Shakespeare wrote plays."
        triple = KnowledgeTriple(
            subject_id="Q1",
            subject_label="Shakespeare",
            subject_aliases=frozenset({"The Bard"}),
            relation_type="occupation",
            object_ids=frozenset({"Q2"}),
            object_labels_and_aliases=frozenset({"playwright"}),
        )
        assert CorpusTermFrequency(corpus)(triple) == 2.0
