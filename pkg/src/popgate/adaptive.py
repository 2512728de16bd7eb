"""Adaptive retrieval: per-relation popularity thresholds deciding, per
question, whether to take the retrieval-augmented or the parametric answer.

Thresholds are tuned by brute force: the candidate set is the two infinite
sentinels plus every midpoint between consecutive distinct popularities in
the tuning split, evaluated independently per relation. At equal accuracy the
smallest threshold wins, i.e. less retrieval.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import QAExample
from .errors import AccountingError, JoinError, PolicyError, ValidationError
from .evaluation import PredictionRecord
from .util import atomic_write_text, dumps_stable, sha256_hex

logger = logging.getLogger(__name__)

RETRIEVE = "retrieve"
PARAMETRIC = "parametric"

NEG_INF = float("-inf")
POS_INF = float("inf")

DEFAULT_SPLIT_FRACTION = 0.75
DEFAULT_REPEATS = 100


def dataset_fingerprint(dataset: Sequence[QAExample]) -> str:
    lines = sorted(f"{ex.id}\t{ex.relation_type}\t{ex.popularity}" for ex in dataset)
    return sha256_hex("\n".join(lines))


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-relation thresholds on log10 popularity; -inf/+inf are valid."""

    thresholds: Mapping[str, float]
    tuned_on: str = ""
    retrieval_mode: str = "retrieval"

    def threshold_for(self, relation: str) -> float:
        try:
            return self.thresholds[relation]
        except KeyError:
            raise PolicyError(f"policy has no threshold for relation {relation!r}") from None

    def to_dict(self) -> dict:
        def encode(value: float) -> float | str:
            if value == NEG_INF:
                return "-inf"
            if value == POS_INF:
                return "+inf"
            return value

        return {
            "thresholds": {rel: encode(t) for rel, t in sorted(self.thresholds.items())},
            "tuned_on": self.tuned_on,
            "retrieval_mode": self.retrieval_mode,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ThresholdPolicy":
        def decode(value) -> float:
            if value == "-inf":
                return NEG_INF
            if value == "+inf":
                return POS_INF
            return float(value)

        try:
            thresholds = {rel: decode(t) for rel, t in payload["thresholds"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad policy payload: {exc}") from exc
        return cls(
            thresholds=thresholds,
            tuned_on=payload.get("tuned_on", ""),
            retrieval_mode=payload.get("retrieval_mode", "retrieval"),
        )

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        payload = self.to_dict()
        if metadata:
            payload["metadata"] = metadata
        atomic_write_text(path, dumps_stable(payload) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def route(example: QAExample, policy: ThresholdPolicy) -> str:
    """RETRIEVE iff the example's log10 popularity is strictly below its
    relation's threshold."""
    threshold = policy.threshold_for(example.relation_type)
    return RETRIEVE if example.log10_popularity < threshold else PARAMETRIC


def _indexed(
    records: Sequence[PredictionRecord], dataset: Sequence[QAExample], label: str
) -> dict[str, PredictionRecord]:
    by_id = {}
    for rec in records:
        if rec.question_id in by_id:
            raise ValidationError(f"{label} run has duplicate records for {rec.question_id!r}")
        by_id[rec.question_id] = rec
    dataset_ids = {ex.id for ex in dataset}
    missing = sorted(dataset_ids - set(by_id))
    extra = sorted(set(by_id) - dataset_ids)
    if missing or extra:
        raise JoinError(
            f"{label} run does not cover the dataset "
            f"(missing: {missing[:10]}, unknown: {extra[:10]})"
        )
    return by_id


def adaptive_accuracy(
    vanilla_records: Sequence[PredictionRecord],
    retrieval_records: Sequence[PredictionRecord],
    dataset: Sequence[QAExample],
    policy: ThresholdPolicy,
) -> float:
    """Accuracy when questions routed to RETRIEVE take the retrieval-augmented
    answer and the rest take the parametric one."""
    van = _indexed(vanilla_records, dataset, "vanilla")
    ret = _indexed(retrieval_records, dataset, "retrieval")
    if not dataset:
        raise ValidationError("cannot score an empty dataset")
    hits = 0
    for ex in dataset:
        rec = ret[ex.id] if route(ex, policy) == RETRIEVE else van[ex.id]
        hits += rec.correct
    return hits / len(dataset)


def choose_threshold(
    entries: Sequence[tuple[float, bool, bool]]
) -> tuple[float, int]:
    """Best threshold for one relation by exhaustive candidate evaluation.

    `entries` are (log10_pop, vanilla_correct, retrieval_correct) rows for the
    tuning questions of this relation. Returns (threshold, correct_count); at
    equal counts the smallest threshold wins.
    """
    if not entries:
        return NEG_INF, 0
    ordered = sorted(entries, key=lambda e: e[0])
    pops = [e[0] for e in ordered]
    prefix_van = [0]
    prefix_ret = [0]
    for _, van, ret in ordered:
        prefix_van.append(prefix_van[-1] + van)
        prefix_ret.append(prefix_ret[-1] + ret)
    total_van = prefix_van[-1]
    candidates = [NEG_INF]
    for lo, hi in zip(pops, pops[1:]):
        if hi > lo:
            candidates.append((lo + hi) / 2.0)
    candidates.append(POS_INF)
    best_threshold = NEG_INF
    best_count = -1
    idx = 0
    for threshold in candidates:
        while idx < len(pops) and pops[idx] < threshold:
            idx += 1
        count = prefix_ret[idx] + (total_van - prefix_van[idx])
        if count > best_count:
            best_threshold, best_count = threshold, count
    return best_threshold, best_count


def candidate_thresholds(pops: Sequence[float]) -> list[float]:
    """Sentinels plus midpoints between consecutive distinct sorted popularities."""
    out = [NEG_INF]
    ordered = sorted(pops)
    for lo, hi in zip(ordered, ordered[1:]):
        if hi > lo:
            out.append((lo + hi) / 2.0)
    out.append(POS_INF)
    return out


def _stratified_split(
    dataset: Sequence[QAExample], split_fraction: float, rng: random.Random
) -> tuple[list[str], list[str]]:
    by_relation: dict[str, list[str]] = {}
    for ex in dataset:
        by_relation.setdefault(ex.relation_type, []).append(ex.id)
    tuning: list[str] = []
    test: list[str] = []
    for relation in sorted(by_relation):
        ids = list(by_relation[relation])
        rng.shuffle(ids)
        k = int(len(ids) * split_fraction)
        tuning.extend(ids[:k])
        test.extend(ids[k:])
    return tuning, test


@dataclass
class RepeatOutcome:
    """One tuning/test split with its fitted thresholds and accuracies."""

    thresholds: dict[str, float]
    tuning_ids: list[str] = field(repr=False)
    test_ids: list[str] = field(repr=False)
    tuning_accuracy: float
    test_accuracy: float


@dataclass
class TuneResult:
    policy: ThresholdPolicy
    mean_test_accuracy: float
    repeat_outcomes: list[RepeatOutcome]

    @property
    def per_repeat_test_accuracies(self) -> list[float]:
        return [r.test_accuracy for r in self.repeat_outcomes]


def _fit_thresholds(
    rows: Mapping[str, tuple[float, bool, bool, str]],
    ids: Sequence[str],
    relations: Sequence[str],
) -> dict[str, float]:
    per_relation: dict[str, list[tuple[float, bool, bool]]] = {rel: [] for rel in relations}
    for qid in ids:
        pop, van, ret, relation = rows[qid]
        per_relation[relation].append((pop, van, ret))
    thresholds = {}
    for relation in relations:
        entries = per_relation[relation]
        if not entries:
            logger.warning(
                "relation %r has no tuning questions; defaulting its threshold to -inf",
                relation,
            )
        thresholds[relation] = choose_threshold(entries)[0]
    return thresholds


def _accuracy_on(
    rows: Mapping[str, tuple[float, bool, bool, str]],
    ids: Sequence[str],
    thresholds: Mapping[str, float],
) -> float:
    if not ids:
        return 0.0
    hits = 0
    for qid in ids:
        pop, van, ret, relation = rows[qid]
        hits += ret if pop < thresholds[relation] else van
    return hits / len(ids)


def tune_thresholds(
    vanilla_records: Sequence[PredictionRecord],
    retrieval_records: Sequence[PredictionRecord],
    dataset: Sequence[QAExample],
    split_fraction: float = DEFAULT_SPLIT_FRACTION,
    repeats: int = DEFAULT_REPEATS,
    rng_seed: int | str = 0,
    retrieval_mode: str = "retrieval",
) -> TuneResult:
    """Tune per-relation thresholds over repeated random splits.

    Each repeat assigns `split_fraction` of every relation's questions to a
    tuning split (the rest to test), fits thresholds on the tuning split, and
    records test-split adaptive accuracy. The returned policy is refit on the
    full dataset; the mean of the per-repeat test accuracies is reported
    alongside it.
    """
    if not 0 < split_fraction < 1:
        raise ValidationError("split_fraction must be in (0, 1)")
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    van = _indexed(vanilla_records, dataset, "vanilla")
    ret = _indexed(retrieval_records, dataset, "retrieval")
    rows = {
        ex.id: (ex.log10_popularity, van[ex.id].correct, ret[ex.id].correct, ex.relation_type)
        for ex in dataset
    }
    relations = sorted({ex.relation_type for ex in dataset})
    outcomes = []
    for i in range(repeats):
        rng = random.Random(f"{rng_seed}\x00{i}")
        tuning_ids, test_ids = _stratified_split(dataset, split_fraction, rng)
        thresholds = _fit_thresholds(rows, tuning_ids, relations)
        outcomes.append(
            RepeatOutcome(
                thresholds=thresholds,
                tuning_ids=tuning_ids,
                test_ids=test_ids,
                tuning_accuracy=_accuracy_on(rows, tuning_ids, thresholds),
                test_accuracy=_accuracy_on(rows, test_ids, thresholds),
            )
        )
    final_thresholds = _fit_thresholds(rows, [ex.id for ex in dataset], relations)
    policy = ThresholdPolicy(
        thresholds=final_thresholds,
        tuned_on=dataset_fingerprint(dataset),
        retrieval_mode=retrieval_mode,
    )
    mean_test = math.fsum(o.test_accuracy for o in outcomes) / len(outcomes)
    return TuneResult(policy=policy, mean_test_accuracy=mean_test, repeat_outcomes=outcomes)


def retrieval_fraction(dataset: Sequence[QAExample], policy: ThresholdPolicy) -> float:
    """Fraction of questions the policy routes to retrieval."""
    if not dataset:
        raise ValidationError("cannot compute retrieval fraction of an empty dataset")
    routed = sum(route(ex, policy) == RETRIEVE for ex in dataset)
    return routed / len(dataset)


@dataclass(frozen=True)
class CostModel:
    price_per_1k_prompt_tokens: float
    price_per_1k_completion_tokens: float
    retrieval_latency_ms: int

    def __post_init__(self):
        if (
            self.price_per_1k_prompt_tokens < 0
            or self.price_per_1k_completion_tokens < 0
            or self.retrieval_latency_ms < 0
        ):
            raise ValidationError("cost model values must be non-negative")

    def record_cost(self, record: PredictionRecord) -> float:
        return (
            record.prompt_tokens / 1000.0 * self.price_per_1k_prompt_tokens
            + record.completion_tokens / 1000.0 * self.price_per_1k_completion_tokens
        )


def cost_report(
    vanilla_records: Sequence[PredictionRecord],
    retrieval_records: Sequence[PredictionRecord],
    dataset: Sequence[QAExample],
    policy: ThresholdPolicy,
    cost_model: CostModel,
) -> dict:
    """Token-cost and latency totals of the routed system vs. both baselines."""
    van = _indexed(vanilla_records, dataset, "vanilla")
    ret = _indexed(retrieval_records, dataset, "retrieval")
    incomplete = sorted(
        rec.question_id
        for rec in list(van.values()) + list(ret.values())
        if rec.prompt_tokens is None
        or rec.completion_tokens is None
        or rec.latency_ms is None
    )
    if incomplete:
        raise AccountingError(
            f"records lacking token counts or latency: {incomplete[:10]}"
        )
    adaptive_cost = 0.0
    vanilla_cost = 0.0
    always_cost = 0.0
    adaptive_ms = 0
    vanilla_ms = 0
    always_ms = 0
    routed = 0
    for ex in dataset:
        v, r = van[ex.id], ret[ex.id]
        vanilla_cost += cost_model.record_cost(v)
        always_cost += cost_model.record_cost(r)
        vanilla_ms += v.latency_ms
        always_ms += r.latency_ms + cost_model.retrieval_latency_ms
        if route(ex, policy) == RETRIEVE:
            routed += 1
            adaptive_cost += cost_model.record_cost(r)
            adaptive_ms += r.latency_ms + cost_model.retrieval_latency_ms
        else:
            adaptive_cost += cost_model.record_cost(v)
            adaptive_ms += v.latency_ms
    savings = 0.0 if always_cost == 0 else 1.0 - adaptive_cost / always_cost
    return {
        "adaptive_cost": adaptive_cost,
        "always_retrieve_cost": always_cost,
        "vanilla_cost": vanilla_cost,
        "savings_fraction": savings,
        "retrieval_fraction": routed / len(dataset) if dataset else 0.0,
        "latency_estimates": {
            "adaptive_ms": adaptive_ms,
            "always_retrieve_ms": always_ms,
            "vanilla_ms": vanilla_ms,
        },
    }
