"""Self-contained synthetic pipeline: generate triples and a matching corpus,
run the oracle LM with and without retrieval, tune routing thresholds, and
assemble the full evaluation report.

The synthetic world is built so that retrieval quality depends on popularity:
passages for rare subjects usually contain the answer, passages for popular
subjects usually do not. Combined with the oracle LM's popularity-driven
parametric recall, this reproduces the regime where routing by popularity
beats both always-retrieving and never-retrieving.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

from .adaptive import (
    CostModel,
    adaptive_accuracy,
    cost_report,
    retrieval_fraction,
    route,
    tune_thresholds,
    RETRIEVE,
)
from .dataset import (
    KnowledgeTriple,
    QAExample,
    RELATIONS,
    default_templates,
    sample_triples,
    verbalize,
    write_dataset,
)
from .evaluation import (
    EvalReport,
    evaluate_run,
    overall_accuracy,
    quadrant_analysis,
    write_records,
    write_report,
)
from .lm import OracleParams, run_predictions
from .retriever import Passage, build_index, save_index, write_corpus

DEMO_SIZE = 2000
LOW_POP_HIT_RATE = 0.85
HIGH_POP_HIT_RATE = 0.35
_MIN_LOG10_POP = 1.0
_MAX_LOG10_POP = 6.0
_DEMO_MIN_BIN_N = 20


@dataclass
class SyntheticWorld:
    triples: list[KnowledgeTriple]
    examples: list[QAExample]
    passages: list[Passage]


def generate_world(
    seed: int | str,
    size: int = DEMO_SIZE,
    low_hit_rate: float = LOW_POP_HIT_RATE,
    high_hit_rate: float = HIGH_POP_HIT_RATE,
    pop_boundary: float = 3.5,
) -> SyntheticWorld:
    """Build `size` synthetic questions plus a one-passage-per-subject corpus.

    Each subject gets a unique label token so BM25 retrieves its own passage;
    whether that passage contains the gold answer is a popularity-dependent
    coin flip (low_hit_rate below pop_boundary, high_hit_rate above).
    """
    rng = random.Random(f"demo\x00{seed}")
    triples = []
    for i in range(size):
        relation = RELATIONS[i % len(RELATIONS)]
        subject = f"Topic{i:05d}"
        answer = f"Fact{i:05d}"
        triples.append(
            KnowledgeTriple(
                subject_id=f"S{i:05d}",
                subject_label=subject,
                subject_aliases=frozenset({subject}),
                relation_type=relation,
                object_ids=frozenset({f"O{i:05d}"}),
                object_labels_and_aliases=frozenset({answer}),
            )
        )
    # Uniform acceptance (frequency pinned above the rejection ceiling) keeps
    # the question count exact while still exercising the sampling stage.
    sampled = sample_triples(
        triples, lambda t: math.e**2, per_relation_cap=size, rng_seed=seed
    )
    templates = default_templates()
    examples = []
    passages = []
    for triple in sampled:
        example = verbalize(triple, templates)
        log10_pop = rng.uniform(_MIN_LOG10_POP, _MAX_LOG10_POP)
        example = example.with_popularity(round(10.0**log10_pop))
        hit_rate = low_hit_rate if example.log10_popularity < pop_boundary else high_hit_rate
        answer = sorted(example.gold_answers)[0]
        detail = answer if rng.random() < hit_rate else "unverified"
        passages.append(
            Passage(
                doc_id=f"D-{triple.subject_id}",
                title=triple.subject_label,
                text=f"{triple.subject_label} dossier entry. {detail}.",
            )
        )
        examples.append(example)
    return SyntheticWorld(triples=triples, examples=examples, passages=passages)


def run_demo(
    seed: int,
    out_dir: str | Path,
    size: int = DEMO_SIZE,
    repeats: int = 100,
    split_fraction: float = 0.75,
    oracle: OracleParams | None = None,
    cost_model: CostModel | None = None,
) -> EvalReport:
    """Run the full synthetic pipeline and write every artifact under out_dir."""
    oracle = oracle or OracleParams()
    cost_model = cost_model or CostModel(
        price_per_1k_prompt_tokens=0.02,
        price_per_1k_completion_tokens=0.02,
        retrieval_latency_ms=50,
    )
    out_dir = Path(out_dir)
    world = generate_world(seed, size=size, pop_boundary=oracle.b)
    dataset = world.examples
    index = build_index(world.passages)

    vanilla = run_predictions(dataset, "vanilla", oracle=oracle, rng_seed=seed)
    retrieval = run_predictions(
        dataset, "retrieval", oracle=oracle, index=index, rng_seed=seed
    )
    tuned = tune_thresholds(
        vanilla,
        retrieval,
        dataset,
        split_fraction=split_fraction,
        repeats=repeats,
        rng_seed=seed,
    )
    policy = tuned.policy

    van_by_id = {r.question_id: r for r in vanilla}
    ret_by_id = {r.question_id: r for r in retrieval}
    routed_records = [
        (ret_by_id if route(ex, policy) == RETRIEVE else van_by_id)[ex.id]
        for ex in dataset
    ]
    summary = evaluate_run(routed_records, dataset, min_bin_n=_DEMO_MIN_BIN_N)
    report = EvalReport(
        overall_accuracy=summary.overall_accuracy,
        per_relation=summary.per_relation,
        bins=summary.bins,
        quadrants=quadrant_analysis(vanilla, retrieval, dataset),
        retrieval_fraction=retrieval_fraction(dataset, policy),
        cost=cost_report(vanilla, retrieval, dataset, policy, cost_model),
        baselines={
            "vanilla": overall_accuracy(vanilla),
            "retrieval": overall_accuracy(retrieval),
        },
        adaptive={
            "mean_test_adaptive_accuracy": tuned.mean_test_accuracy,
            "full_fit_adaptive_accuracy": adaptive_accuracy(
                vanilla, retrieval, dataset, policy
            ),
            "per_repeat_test_accuracies": tuned.per_repeat_test_accuracies,
            "split_fraction": split_fraction,
            "repeats": repeats,
            "seed": seed,
            "thresholds": policy.to_dict()["thresholds"],
        },
    )

    write_dataset(dataset, out_dir / "dataset.jsonl")
    write_corpus(world.passages, out_dir / "corpus.jsonl")
    save_index(index, out_dir / "index.pgidx")
    write_records(vanilla, out_dir / "run_vanilla.jsonl")
    write_records(retrieval, out_dir / "run_retrieval.jsonl")
    policy.save(
        out_dir / "policy.json",
        metadata={
            "seed": seed,
            "split_fraction": split_fraction,
            "repeats": repeats,
            "mean_test_adaptive_accuracy": tuned.mean_test_accuracy,
        },
    )
    write_report(report, out_dir)
    return report
