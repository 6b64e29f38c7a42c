"""Best-effort report fetcher: download an HTML page, strip it to text, and
write it in the on-disk report format. Decoupled from annotation on purpose —
nothing downstream depends on this module."""

from __future__ import annotations

import datetime as dt
from html.parser import HTMLParser
from pathlib import Path

import requests

from .corpus import Paragraph, Report, ReportKind, render_report

_SKIPPED_TAGS = {"script", "style", "head", "nav", "footer"}
_BLOCK_TAGS = {"p", "div", "br", "li", "h1", "h2", "h3", "h4", "tr"}


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__()
        self._chunks: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in _SKIPPED_TAGS:
            self._skip_depth += 1
        elif tag in _BLOCK_TAGS:
            self._chunks.append("\n\n")

    def handle_endtag(self, tag):
        if tag in _SKIPPED_TAGS and self._skip_depth:
            self._skip_depth -= 1

    def handle_data(self, data):
        if not self._skip_depth:
            self._chunks.append(data)

    def text(self) -> str:
        return "".join(self._chunks)


def html_to_text(html: str) -> str:
    parser = _TextExtractor()
    parser.feed(html)
    return parser.text()


def fetch_report(
    url: str,
    report_id: str,
    date: dt.date,
    meeting: str,
    kind: ReportKind,
    framework: str,
    out_dir: str | Path,
    session: requests.Session | None = None,
    timeout: float = 30.0,
) -> Path:
    """Download one report page and write it as ``<report_id>.txt``."""
    session = session or requests.Session()
    response = session.get(url, timeout=timeout)
    response.raise_for_status()
    body = html_to_text(response.text)
    paragraphs = []
    for block in body.split("\n\n"):
        block = " ".join(block.split())
        if block:
            paragraphs.append(Paragraph(len(paragraphs), block, len(block.split())))
    report = Report(
        report_id=report_id,
        date=date,
        meeting=meeting,
        kind=kind,
        framework=framework,
        paragraphs=tuple(paragraphs),
    )
    path = Path(out_dir) / f"{report_id}.txt"
    path.write_text(render_report(report), encoding="utf-8")
    return path
