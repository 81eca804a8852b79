"""Ranking metrics for multiple-choice comprehension.

Ranks break ties by candidate index: among equal scores the lower index
ranks first.  All metrics are exact ``Fraction`` values so they can be
compared against brute-force oracles without tolerance.
"""

from __future__ import annotations

import json
import os
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from strudel.corpus import ComprehensionExample
from strudel.errors import EmptyBatch


@dataclass(frozen=True)
class ScoredExample:
    example_id: str
    scores: tuple[float, ...]
    gold_index: int

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.scores) < 2:
            raise ValueError("a scored example needs at least two candidates")
        if not 0 <= self.gold_index < len(self.scores):
            raise IndexError(f"gold index {self.gold_index} outside {len(self.scores)} scores")


def rank_of_gold(ex: ScoredExample) -> int:
    """1-based rank of the gold candidate (strictly higher scores, then lower-index ties)."""
    g, s = ex.gold_index, ex.scores
    ahead = sum(1 for i, x in enumerate(s) if x > s[g] or (x == s[g] and i < g))
    return ahead + 1


def _check(batch: Sequence[ScoredExample]) -> None:
    if not batch:
        raise EmptyBatch("metrics need at least one scored example")


def recall_at_k(batch: Sequence[ScoredExample], k: int) -> Fraction:
    _check(batch)
    if k < 1:
        raise ValueError("k must be >= 1")
    return Fraction(sum(rank_of_gold(ex) <= k for ex in batch), len(batch))


def mean_reciprocal_rank(batch: Sequence[ScoredExample]) -> Fraction:
    _check(batch)
    return sum((Fraction(1, rank_of_gold(ex)) for ex in batch), Fraction(0)) / len(batch)


def accuracy(batch: Sequence[ScoredExample]) -> Fraction:
    """Share of examples whose lowest-index argmax is the gold candidate (equals R@1)."""
    return recall_at_k(batch, 1)


@dataclass(frozen=True)
class MetricsReport:
    n_examples: int
    r_at_1: Fraction
    r_at_2: Fraction
    mrr: Fraction
    accuracy: Fraction
    scored: tuple[ScoredExample, ...] = field(default=(), repr=False, compare=False)

    @classmethod
    def from_scored(cls, batch: Sequence[ScoredExample]) -> MetricsReport:
        return cls(
            n_examples=len(batch),
            r_at_1=recall_at_k(batch, 1),
            r_at_2=recall_at_k(batch, 2),
            mrr=mean_reciprocal_rank(batch),
            accuracy=accuracy(batch),
            scored=tuple(batch),
        )

    def as_floats(self) -> dict[str, float]:
        return {
            "R@1": float(self.r_at_1),
            "R@2": float(self.r_at_2),
            "MRR": float(self.mrr),
            "accuracy": float(self.accuracy),
        }

    def line(self) -> str:
        """Single machine-readable line: ``n_examples=.. R@1=.. R@2=.. MRR=.. accuracy=..``."""
        vals = " ".join(f"{k}={v:.4f}" for k, v in self.as_floats().items())
        return f"n_examples={self.n_examples} {vals}"

    def table(self) -> str:
        rows = [("examples", str(self.n_examples))]
        rows += [(k, f"{v:.4f}") for k, v in self.as_floats().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)

    def dump_scores(self, path: str | os.PathLike) -> Path:
        """Write one JSON line per example: id, scores, gold index and gold rank."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for ex in self.scored:
                rec = {
                    "id": ex.example_id,
                    "scores": list(ex.scores),
                    "gold_index": ex.gold_index,
                    "rank": rank_of_gold(ex),
                }
                fh.write(json.dumps(rec) + "\n")
        os.replace(tmp, path)
        return path


Scorer = Callable[[Sequence[ComprehensionExample]], list[list[float]]]


def score_examples(scorer: Scorer, examples: Sequence[ComprehensionExample]) -> list[ScoredExample]:
    if not examples:
        raise EmptyBatch("no examples to evaluate")
    raw = scorer(examples)
    if len(raw) != len(examples):
        raise ValueError(f"scorer returned {len(raw)} rows for {len(examples)} examples")
    return [ScoredExample(ex.id, tuple(s), ex.gold_index) for s, ex in zip(raw, examples)]


def evaluate(scorer, examples: Sequence[ComprehensionExample]) -> MetricsReport:
    """Score ``examples`` and summarise.

    ``scorer`` is either a model exposing ``score_examples`` or a callable
    mapping a list of examples to one list of candidate scores per example.
    """
    fn = getattr(scorer, "score_examples", scorer)
    return MetricsReport.from_scored(score_examples(fn, examples))
