"""The compiled longitudinal dataset: annotation records joined with report
dates and meetings, export to CSV/JSONL, and the descriptive statistics over
years, entities, relation types, and topics."""

from __future__ import annotations

import csv
import datetime as dt
import json
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Report
from .model import Provenance, RelationType


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRow:
    date: dt.date
    meeting: str
    report_id: str
    paragraph_index: int
    party1: str
    party2: str
    relation: RelationType
    topic: str | None
    derived: Provenance
    out_of_space: tuple[str, ...] = ()


@dataclass(frozen=True)
class LongitudinalDataset:
    rows: tuple[DatasetRow, ...]
    topic_space_version: int | None = None
    run_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def stated_only(self) -> "LongitudinalDataset":
        return replace(
            self, rows=tuple(r for r in self.rows if r.derived is Provenance.STATED)
        )


_SORT_KEY = lambda r: (  # noqa: E731 - shared by build and export
    r.date.isoformat(),
    r.report_id,
    r.paragraph_index,
    r.party1,
    r.party2,
    r.relation.label,
    r.topic or "",
    r.derived.value,
)


def build_dataset(
    records: Iterable[dict],
    reports: Sequence[Report],
    topic_space_version: int | None = None,
    include_out_of_space: bool = False,
) -> LongitudinalDataset:
    """Join annotation records with report metadata.

    Every record must join to exactly one report; duplicates (same quadruplet
    in the same paragraph) collapse to one row. Rows with out-of-space
    parties are excluded unless asked for.
    """
    by_id: dict[str, Report] = {}
    for report in reports:
        if report.report_id in by_id:
            raise DatasetError(f"duplicate report id in corpus: {report.report_id!r}")
        by_id[report.report_id] = report

    rows: dict[tuple, DatasetRow] = {}
    run_ids: list[str] = []
    for record in records:
        report = by_id.get(record["report_id"])
        if report is None:
            raise DatasetError(f"annotation references unknown report {record['report_id']!r}")
        relation = RelationType.parse(record["relation"])
        if relation is None:
            raise DatasetError(f"unknown relation {record['relation']!r}")
        flags = tuple(record.get("out_of_space_flags") or ())
        if flags and not include_out_of_space:
            continue
        row = DatasetRow(
            date=report.date,
            meeting=report.meeting,
            report_id=report.report_id,
            paragraph_index=int(record["paragraph_index"]),
            party1=record["party1"],
            party2=record["party2"],
            relation=relation,
            topic=record.get("topic"),
            derived=Provenance(record.get("derived", "stated")),
            out_of_space=flags,
        )
        key = (row.report_id, row.paragraph_index, row.party1, row.party2,
               row.relation, row.topic)
        existing = rows.get(key)
        if existing is None or list(Provenance).index(row.derived) < list(Provenance).index(existing.derived):
            rows[key] = row
        run_id = record.get("run_id")
        if run_id and run_id not in run_ids:
            run_ids.append(run_id)
    return LongitudinalDataset(
        rows=tuple(sorted(rows.values(), key=_SORT_KEY)),
        topic_space_version=topic_space_version,
        run_ids=tuple(run_ids),
    )


CSV_COLUMNS = ("date", "meeting", "party1", "party2", "relation", "topic", "derived")


def export_csv(dataset: LongitudinalDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in sorted(dataset.rows, key=_SORT_KEY):
            writer.writerow(
                [
                    row.date.isoformat(),
                    row.meeting,
                    row.party1,
                    row.party2,
                    row.relation.label,
                    row.topic or "",
                    row.derived.value,
                ]
            )


def export_jsonl(dataset: LongitudinalDataset, path: str | Path) -> None:
    """Lossless export; the first line is a metadata record."""
    lines = [
        json.dumps(
            {
                "kind": "meta",
                "topic_space_version": dataset.topic_space_version,
                "run_ids": list(dataset.run_ids),
            },
            sort_keys=True,
        )
    ]
    for row in sorted(dataset.rows, key=_SORT_KEY):
        lines.append(
            json.dumps(
                {
                    "kind": "interaction",
                    "date": row.date.isoformat(),
                    "meeting": row.meeting,
                    "report_id": row.report_id,
                    "paragraph_index": row.paragraph_index,
                    "party1": row.party1,
                    "party2": row.party2,
                    "relation": row.relation.label,
                    "topic": row.topic,
                    "derived": row.derived.value,
                    "out_of_space_flags": list(row.out_of_space),
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_jsonl(path: str | Path) -> LongitudinalDataset:
    meta: dict = {}
    rows = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("kind") == "meta":
                meta = record
                continue
            relation = RelationType.parse(record["relation"])
            if relation is None:
                raise DatasetError(f"{path}:{number}: unknown relation {record['relation']!r}")
            rows.append(
                DatasetRow(
                    date=dt.date.fromisoformat(record["date"]),
                    meeting=record["meeting"],
                    report_id=record["report_id"],
                    paragraph_index=int(record["paragraph_index"]),
                    party1=record["party1"],
                    party2=record["party2"],
                    relation=relation,
                    topic=record.get("topic"),
                    derived=Provenance(record.get("derived", "stated")),
                    out_of_space=tuple(record.get("out_of_space_flags") or ()),
                )
            )
    return LongitudinalDataset(
        rows=tuple(rows),
        topic_space_version=meta.get("topic_space_version"),
        run_ids=tuple(meta.get("run_ids") or ()),
    )


@dataclass(frozen=True)
class YearlyDistribution:
    years: tuple[int, ...]
    report_counts: tuple[int, ...]
    interaction_counts: tuple[int, ...]
    correlation: float | None


def yearly_distribution(
    dataset: LongitudinalDataset, reports: Sequence[Report]
) -> YearlyDistribution:
    """Per-year report and interaction counts plus their Pearson correlation.

    The correlation is undefined (None) with fewer than two distinct years or
    a constant series.
    """
    report_years = Counter(r.date.year for r in reports)
    interaction_years = Counter(r.date.year for r in dataset.rows)
    years = tuple(sorted(report_years.keys() | interaction_years.keys()))
    report_counts = tuple(report_years.get(y, 0) for y in years)
    interaction_counts = tuple(interaction_years.get(y, 0) for y in years)
    correlation = None
    if len(years) >= 2:
        try:
            correlation = statistics.correlation(report_counts, interaction_counts)
        except statistics.StatisticsError:
            correlation = None
    return YearlyDistribution(years, report_counts, interaction_counts, correlation)


def activity_degrees(dataset: LongitudinalDataset) -> list[tuple[str, int, int]]:
    """Per-entity (out-degree as sender, in-degree as recipient), sorted by
    descending out-degree; closure-derived rows count."""
    out_degree: Counter[str] = Counter()
    in_degree: Counter[str] = Counter()
    for row in dataset.rows:
        out_degree[row.party1] += 1
        in_degree[row.party2] += 1
    entities = sorted(out_degree.keys() | in_degree.keys())
    return sorted(
        [(e, out_degree.get(e, 0), in_degree.get(e, 0)) for e in entities],
        key=lambda item: (-item[1], item[0]),
    )


def relation_frequencies(dataset: LongitudinalDataset) -> dict[str, dict[int, int]]:
    """Counts per relation type per year; all five series always present."""
    series: dict[str, dict[int, int]] = {r.label: {} for r in RelationType}
    for row in dataset.rows:
        year = row.date.year
        series[row.relation.label][year] = series[row.relation.label].get(year, 0) + 1
    return series


def topic_distribution(
    dataset: LongitudinalDataset, by_year: bool = False
) -> dict:
    """Counts per topic id; interactions without a topic land in the None
    bucket. With ``by_year`` the counts nest under each year."""
    if not by_year:
        counts: Counter = Counter(row.topic for row in dataset.rows)
        return dict(counts)
    nested: dict[int, Counter] = defaultdict(Counter)
    for row in dataset.rows:
        nested[row.date.year][row.topic] += 1
    return {year: dict(counter) for year, counter in sorted(nested.items())}
