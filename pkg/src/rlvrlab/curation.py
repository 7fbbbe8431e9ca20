"""Inclusion-exclusion pipeline for building a verifiable training set.

Stages run in a fixed order: style/format screening, exact then near
deduplication, decontamination against evaluation questions, difficulty
pruning by pass rate, and an answer-length cap.  Each stage partitions its
input into (kept, excluded) without mutating records, and the funnel report
telescopes the counts.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .verifier import normalize as normalize_answer
from .verifier import reward as verify_reward

PROOF_PATTERN = re.compile(r"\bprove\b|\bshow that\b|\bdisprove\b", re.IGNORECASE)
NON_ASCII_RATIO_LIMIT = 0.3


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    question: str
    answer: str
    source: str = ""
    pass_rate: Optional[float] = None
    response: Optional[str] = None
    response_len: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError("question must be nonempty")
        if self.pass_rate is not None and not 0.0 <= self.pass_rate <= 1.0:
            raise ValueError(f"pass_rate {self.pass_rate} outside [0, 1]")

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "source": self.source,
        }
        for key in ("pass_rate", "response", "response_len"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, d: dict, fallback_id: str = "") -> "ProblemRecord":
        return cls(
            id=str(d.get("id", fallback_id)),
            question=d["question"],
            answer=str(d.get("answer", "")),
            source=str(d.get("source", "")),
            pass_rate=d.get("pass_rate"),
            response=d.get("response"),
            response_len=d.get("response_len"),
        )


@dataclass(frozen=True)
class StageCount:
    name: str
    input_count: int
    excluded_count: int


@dataclass(frozen=True)
class FunnelReport:
    stages: tuple[StageCount, ...]
    final_count: int

    def __post_init__(self) -> None:
        count = self.stages[0].input_count if self.stages else self.final_count
        for stage in self.stages:
            if stage.input_count != count:
                raise ValueError("funnel stage counts do not telescope")
            count -= stage.excluded_count
        if count != self.final_count:
            raise ValueError("funnel final count does not telescope")

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "name": s.name,
                    "input": s.input_count,
                    "excluded": s.excluded_count,
                }
                for s in self.stages
            ],
            "final_count": self.final_count,
        }

    def render_table(self) -> str:
        width = max((len(s.name) for s in self.stages), default=5)
        lines = [f"{'stage':<{width}}  {'input':>8}  {'excluded':>8}  {'kept':>8}"]
        for s in self.stages:
            kept = s.input_count - s.excluded_count
            lines.append(
                f"{s.name:<{width}}  {s.input_count:>8}  {s.excluded_count:>8}  {kept:>8}"
            )
        lines.append(f"{'final':<{width}}  {'':>8}  {'':>8}  {self.final_count:>8}")
        return "\n".join(lines)


def _normalize_question(text: str) -> str:
    return " ".join(text.lower().split())


def _word_ngrams(text: str, n: int) -> set[tuple[str, ...]]:
    words = _normalize_question(text).split()
    return {tuple(words[i : i + n]) for i in range(len(words) - n + 1)}


def style_filter(
    records: Sequence[ProblemRecord],
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Drop proof-style questions and questions that look non-English."""
    kept, excluded = [], []
    for rec in records:
        non_ascii = sum(1 for ch in rec.question if ord(ch) > 127)
        if PROOF_PATTERN.search(rec.question) or (
            non_ascii / len(rec.question) > NON_ASCII_RATIO_LIMIT
        ):
            excluded.append(rec)
        else:
            kept.append(rec)
    return kept, excluded


def exact_dedup(
    records: Sequence[ProblemRecord],
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Keep the first occurrence of each normalized question."""
    seen: set[str] = set()
    kept, excluded = [], []
    for rec in records:
        key = _normalize_question(rec.question)
        if key in seen:
            excluded.append(rec)
        else:
            seen.add(key)
            kept.append(rec)
    return kept, excluded


def ngram_dedup(
    records: Sequence[ProblemRecord],
    n: int = 10,
    jaccard_threshold: float = 0.5,
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Drop near-duplicates by word n-gram Jaccard similarity.

    Candidate pairs come from an inverted index on n-grams, so only records
    sharing at least one n-gram with an earlier kept record are compared.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    index: dict[tuple[str, ...], list[int]] = defaultdict(list)
    kept_grams: list[set[tuple[str, ...]]] = []
    kept, excluded = [], []
    for rec in records:
        grams = _word_ngrams(rec.question, n)
        candidates = {idx for g in grams for idx in index.get(g, ())}
        duplicate = False
        for idx in candidates:
            other = kept_grams[idx]
            inter = len(grams & other)
            union = len(grams) + len(other) - inter
            if union > 0 and inter / union >= jaccard_threshold:
                duplicate = True
                break
        if duplicate:
            excluded.append(rec)
        else:
            pos = len(kept_grams)
            kept_grams.append(grams)
            for g in grams:
                index[g].append(pos)
            kept.append(rec)
    return kept, excluded


def decontaminate(
    records: Sequence[ProblemRecord],
    eval_questions: Sequence[str],
    n: int = 10,
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Drop records sharing any word n-gram with any evaluation question."""
    eval_grams: set[tuple[str, ...]] = set()
    for q in eval_questions:
        eval_grams |= _word_ngrams(q, n)
    kept, excluded = [], []
    for rec in records:
        if eval_grams and _word_ngrams(rec.question, n) & eval_grams:
            excluded.append(rec)
        else:
            kept.append(rec)
    return kept, excluded


def difficulty_filter(
    records: Sequence[ProblemRecord],
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Drop the trivial (pass rate 1) and the unsolvable (pass rate 0).

    Records without a pass rate pass through unchanged.
    """
    kept, excluded = [], []
    for rec in records:
        if rec.pass_rate is not None and rec.pass_rate in (0.0, 1.0):
            excluded.append(rec)
        else:
            kept.append(rec)
    return kept, excluded


def answer_length_filter(
    records: Sequence[ProblemRecord], max_chars: int = 20
) -> tuple[list[ProblemRecord], list[ProblemRecord]]:
    """Drop records whose normalized answer exceeds ``max_chars``."""
    kept, excluded = [], []
    for rec in records:
        if len(normalize_answer(rec.answer)) > max_chars:
            excluded.append(rec)
        else:
            kept.append(rec)
    return kept, excluded


def estimate_pass_rate(
    records: Sequence[ProblemRecord],
    rollout_fn: Callable[[str, np.random.Generator], tuple[str, bool]],
    attempts: int = 5,
    seed: int = 0,
) -> list[ProblemRecord]:
    """Attach pass rates measured by rolling out an answerer per record.

    ``rollout_fn(question, rng)`` returns (answer string, truncated flag);
    each attempt is graded by the cascade verifier against the record's
    gold answer.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    out = []
    for idx, rec in enumerate(records):
        hits = 0
        for attempt in range(attempts):
            rng = np.random.default_rng([seed, idx, attempt])
            answer, truncated = rollout_fn(rec.question, rng)
            hits += int(verify_reward(answer, rec.answer, truncated))
        out.append(replace(rec, pass_rate=hits / attempts))
    return out


def select_longest(
    records: Sequence[ProblemRecord], k: int
) -> list[ProblemRecord]:
    """The k records with the longest responses, ties broken by id."""
    if k > len(records):
        raise ValueError(f"k={k} exceeds record count {len(records)}")
    if any(rec.response_len is None for rec in records):
        raise ValueError("response_len must be present on every record")
    ranked = sorted(records, key=lambda r: (-r.response_len, r.id))
    return ranked[:k]


@dataclass(frozen=True)
class CurationConfig:
    ngram_n: int = 10
    jaccard_threshold: float = 0.5
    max_answer_chars: int = 20
    eval_questions: tuple[str, ...] = field(default_factory=tuple)


def run_pipeline(
    records: Sequence[ProblemRecord], config: CurationConfig
) -> tuple[list[ProblemRecord], FunnelReport]:
    """Apply every filter in order and report the per-stage exclusions."""
    stages: list[StageCount] = []
    current = list(records)

    def apply(name: str, fn) -> None:
        nonlocal current
        kept, excluded = fn(current)
        stages.append(StageCount(name, len(current), len(excluded)))
        current = kept

    apply("style", style_filter)
    apply("exact_dedup", exact_dedup)
    apply(
        "ngram_dedup",
        lambda recs: ngram_dedup(recs, config.ngram_n, config.jaccard_threshold),
    )
    apply(
        "decontaminate",
        lambda recs: decontaminate(recs, config.eval_questions, config.ngram_n),
    )
    apply("difficulty", difficulty_filter)
    apply(
        "answer_length",
        lambda recs: answer_length_filter(recs, config.max_answer_chars),
    )
    return current, FunnelReport(tuple(stages), len(current))


def read_records(path: str) -> list[ProblemRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if line:
                records.append(ProblemRecord.from_dict(json.loads(line), f"r{i}"))
    return records


def write_records(records: Sequence[ProblemRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
