"""Ingestion of negotiation reports: a small key:value metadata header, a
blank line, then the body. Paragraphs are blank-line separated blocks and are
the unit of annotation downstream.
"""

from __future__ import annotations

import datetime as dt
import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

_HEADER_FIELDS = ("report_id", "date", "meeting", "kind", "framework")


class ReportKind(enum.Enum):
    DAILY = "daily"
    SUMMARY = "summary"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class Paragraph:
    index: int
    text: str
    word_count: int


@dataclass(frozen=True)
class Report:
    report_id: str
    date: dt.date
    meeting: str
    kind: ReportKind
    framework: str
    paragraphs: tuple[Paragraph, ...]

    @property
    def body(self) -> str:
        """The normalized body: paragraph texts joined by blank lines."""
        return "\n\n".join(p.text for p in self.paragraphs)


def parse_report(
    raw: str,
    boilerplate: Sequence[str] = (),
    source: str = "<string>",
) -> Report:
    """Parse one report document.

    ``boilerplate`` is a list of regex patterns; paragraphs matching any of
    them (headers, footers, mastheads) are dropped. An empty body yields a
    report with zero paragraphs and a logged warning.
    """
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    header, _, body = text.partition("\n\n")
    meta: dict[str, str] = {}
    for line in header.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise IngestError(f"{source}: malformed header line {line!r}")
        meta[key.strip().casefold()] = value.strip()
    for field in _HEADER_FIELDS:
        if not meta.get(field):
            raise IngestError(f"{source}: missing metadata field '{field}'")
    try:
        date = dt.date.fromisoformat(meta["date"])
    except ValueError as exc:
        raise IngestError(f"{source}: invalid metadata field 'date': {exc}") from None
    try:
        kind = ReportKind(meta["kind"].casefold())
    except ValueError:
        raise IngestError(
            f"{source}: invalid metadata field 'kind': {meta['kind']!r}"
        ) from None

    patterns = [re.compile(p) for p in boilerplate]
    paragraphs = []
    for block in re.split(r"\n\s*\n", body):
        block = "\n".join(line.rstrip() for line in block.splitlines()).strip()
        if not block:
            continue
        if any(p.search(block) for p in patterns):
            continue
        paragraphs.append(
            Paragraph(index=len(paragraphs), text=block, word_count=len(block.split()))
        )
    if not paragraphs:
        log.warning("%s: report %s has an empty body", source, meta["report_id"])
    return Report(
        report_id=meta["report_id"],
        date=date,
        meeting=meta["meeting"],
        kind=kind,
        framework=meta["framework"],
        paragraphs=tuple(paragraphs),
    )


def render_report(report: Report) -> str:
    """Serialize a report back to the on-disk format (parse round-trips)."""
    header = "\n".join(
        [
            f"report_id: {report.report_id}",
            f"date: {report.date.isoformat()}",
            f"meeting: {report.meeting}",
            f"kind: {report.kind.value}",
            f"framework: {report.framework}",
        ]
    )
    return f"{header}\n\n{report.body}\n"


def ingest_dir(path: str | Path, boilerplate: Sequence[str] = ()) -> list[Report]:
    """Parse every ``*.txt`` report under a directory, sorted by date then id."""
    root = Path(path)
    if not root.is_dir():
        raise IngestError(f"input directory not found: {root}")
    reports = []
    for file in sorted(root.glob("*.txt")):
        reports.append(parse_report(file.read_text(encoding="utf-8"), boilerplate, str(file)))
    reports.sort(key=lambda r: (r.date, r.report_id))
    return reports


def filter_corpus(reports: Iterable[Report], frameworks: Iterable[str]) -> list[Report]:
    """Keep reports whose framework is on the allow-list, preserving order."""
    allowed = {f.casefold() for f in frameworks}
    return [r for r in reports if r.framework.casefold() in allowed]


@dataclass(frozen=True)
class CorpusStats:
    report_count: int
    per_year: dict[int, int]
    mean_paragraphs: float
    mean_words_per_paragraph: float


def corpus_stats(reports: Sequence[Report]) -> CorpusStats:
    if not reports:
        return CorpusStats(0, {}, 0.0, 0.0)
    per_year = Counter(r.date.year for r in reports)
    paragraphs = [p for r in reports for p in r.paragraphs]
    mean_paragraphs = len(paragraphs) / len(reports)
    mean_words = (
        sum(p.word_count for p in paragraphs) / len(paragraphs) if paragraphs else 0.0
    )
    return CorpusStats(
        report_count=len(reports),
        per_year=dict(sorted(per_year.items())),
        mean_paragraphs=mean_paragraphs,
        mean_words_per_paragraph=mean_words,
    )
