"""Scoring of predicted annotations against gold: set-based precision/recall
for relation triplets, accuracy and macro F1 for attributes, Cohen's kappa
for annotator agreement, and fuzzy quote-to-paragraph alignment."""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .corpus import Report

TripletKey = Hashable


def triplet_prf(pred: set, gold: set) -> tuple[float, float]:
    """Precision and recall over exact triplet matches.

    Empty-set conventions keep both scores defined: precision is 1.0 when
    nothing was predicted, recall is 1.0 when there is no gold.
    """
    hits = len(pred & gold)
    precision = 1.0 if not pred else hits / len(pred)
    recall = 1.0 if not gold else hits / len(gold)
    return precision, recall


def attribute_metrics(pred: Sequence, gold: Sequence) -> tuple[float, float]:
    """Accuracy and macro F1 over aligned label lists.

    Macro F1 averages per-label F1 over the labels present in gold; a label
    with zero precision and recall contributes 0.
    """
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold")
    if not gold:
        return 1.0, 1.0
    accuracy = sum(p == g for p, g in zip(pred, gold)) / len(gold)
    f1_scores = []
    for label in sorted(set(gold), key=repr):
        tp = sum(1 for p, g in zip(pred, gold) if p == label and g == label)
        n_pred = sum(1 for p in pred if p == label)
        n_gold = sum(1 for g in gold if g == label)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold
        f1_scores.append(
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return accuracy, sum(f1_scores) / len(f1_scores)


def cohen_kappa(ann1: Sequence, ann2: Sequence) -> float:
    """Chance-corrected agreement between two annotators."""
    if len(ann1) != len(ann2):
        raise ValueError(f"length mismatch: {len(ann1)} vs {len(ann2)}")
    if not ann1:
        raise ValueError("kappa is undefined on empty label lists")
    n = len(ann1)
    observed = sum(a == b for a, b in zip(ann1, ann2)) / n
    counts1 = Counter(ann1)
    counts2 = Counter(ann2)
    expected = sum(
        (counts1[label] / n) * (counts2[label] / n) for label in counts1.keys() | counts2.keys()
    )
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


class MatchStatus(enum.Enum):
    MATCHED = "matched"
    AMBIGUOUS = "ambiguous"
    NO_MATCH = "no_match"


@dataclass(frozen=True)
class QuoteMatch:
    status: MatchStatus
    index: int | None = None
    candidates: tuple[int, ...] = ()


_TOKEN_RE = re.compile(r"\w+")


def _word_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


def quote_to_paragraph(quote: str, report: Report, threshold: float = 0.9) -> QuoteMatch:
    """Map a quote to the unique paragraph whose word overlap strictly
    exceeds the threshold.

    Overlap is the multiset intersection of case-folded word tokens divided
    by the quote's token count. Several qualifying paragraphs yield an
    ambiguous result listing all of them; none yields no-match.
    """
    if not quote.strip():
        raise ValueError("quote must be non-empty")
    quote_counts = Counter(_word_tokens(quote))
    total = sum(quote_counts.values())
    if total == 0:
        return QuoteMatch(MatchStatus.NO_MATCH)
    qualifying = []
    for paragraph in report.paragraphs:
        counts = Counter(_word_tokens(paragraph.text))
        overlap = sum(min(n, counts[token]) for token, n in quote_counts.items()) / total
        if overlap > threshold:
            qualifying.append(paragraph.index)
    if not qualifying:
        return QuoteMatch(MatchStatus.NO_MATCH)
    if len(qualifying) > 1:
        return QuoteMatch(MatchStatus.AMBIGUOUS, candidates=tuple(qualifying))
    return QuoteMatch(MatchStatus.MATCHED, index=qualifying[0], candidates=tuple(qualifying))


@dataclass(frozen=True)
class MetricsReport:
    """Scores for one predicted-vs-gold comparison.

    ``per_paragraph`` holds (paragraph key, precision, recall) rows;
    ``support`` counts gold occurrences per attribute label.
    """

    precision: float
    recall: float
    accuracy: float | None
    macro_f1: float | None
    support: dict = field(default_factory=dict)
    per_paragraph: tuple = ()

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "support": {str(k): v for k, v in sorted(self.support.items(), key=repr)},
            "per_paragraph": [
                {"paragraph": list(key), "precision": p, "recall": r}
                for key, p, r in self.per_paragraph
            ],
        }

    def to_text(self) -> str:
        """Human-readable table; percentages to one decimal place."""
        lines = [
            "metric      value",
            f"precision   {self.precision * 100:.1f}",
            f"recall      {self.recall * 100:.1f}",
        ]
        if self.accuracy is not None:
            lines.append(f"accuracy    {self.accuracy * 100:.1f}")
        if self.macro_f1 is not None:
            lines.append(f"macro F1    {self.macro_f1 * 100:.1f}")
        if self.support:
            lines.append("")
            lines.append("label support (gold)")
            for label, count in sorted(self.support.items(), key=lambda kv: repr(kv[0])):
                lines.append(f"  {label}: {count}")
        return "\n".join(lines)


def evaluate_records(pred_rows: Sequence[dict], gold_rows: Sequence[dict]) -> MetricsReport:
    """Score prediction records against gold records (annotation-file dicts).

    Relation P/R matches exact (party1, party2, relation) triplets within the
    same paragraph. Attribute scores compare topics over the triplets found
    in both files, aligned by triplet key; they are omitted when no triplet
    matches.
    """
    pred_keys = {_triplet_key(row) for row in pred_rows}
    gold_keys = {_triplet_key(row) for row in gold_rows}
    precision, recall = triplet_prf(pred_keys, gold_keys)

    paragraphs = sorted(
        {key[:2] for key in pred_keys | gold_keys}, key=lambda item: (str(item[0]), item[1])
    )
    per_paragraph = tuple(
        (
            para,
            *triplet_prf(
                {k for k in pred_keys if k[:2] == para},
                {k for k in gold_keys if k[:2] == para},
            ),
        )
        for para in paragraphs
    )

    gold_topics = {_triplet_key(row): row.get("topic") for row in gold_rows}
    pred_topics = {_triplet_key(row): row.get("topic") for row in pred_rows}
    matched = sorted(pred_keys & gold_keys, key=repr)
    accuracy = macro_f1 = None
    if matched:
        accuracy, macro_f1 = attribute_metrics(
            [pred_topics[key] for key in matched], [gold_topics[key] for key in matched]
        )
    support = Counter(row.get("topic") for row in gold_rows)
    return MetricsReport(
        precision=precision,
        recall=recall,
        accuracy=accuracy,
        macro_f1=macro_f1,
        support=dict(support),
        per_paragraph=per_paragraph,
    )


def _triplet_key(row: dict) -> tuple:
    return (
        row["report_id"],
        row["paragraph_index"],
        row["party1"],
        row["party2"],
        row["relation"],
    )
