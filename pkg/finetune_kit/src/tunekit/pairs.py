"""Instruction-pair file handling: reading, validation, and output parsing.

The kit exchanges only files with the annotation side. An instruction pair is
one JSONL record with an ``instruction`` (the full rendered prompt) and an
``output``: for the relation subtask a JSON list of objects with keys
"Party1", "Party2", and "Relation"; for the presence subtask the word "Yes"
or "No".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


@dataclass(frozen=True)
class InstructionPair:
    instruction: str
    output: str
    subtask: str


class PairError(ValueError):
    pass


def parse_relation_output(output: str) -> set[tuple[str, str, str]]:
    """Parse a relation-subtask output back into its triplet set."""
    try:
        rows = json.loads(output)
    except json.JSONDecodeError as exc:
        raise PairError(f"output is not JSON: {exc}") from None
    if not isinstance(rows, list):
        raise PairError("output must be a JSON list")
    triplets = set()
    for row in rows:
        if not isinstance(row, dict):
            raise PairError("output entries must be JSON objects")
        missing = {"Party1", "Party2", "Relation"} - set(row)
        if missing:
            raise PairError(f"output entry missing keys: {sorted(missing)}")
        triplets.add((row["Party1"], row["Party2"], row["Relation"]))
    return triplets


def parse_presence_output(output: str) -> bool:
    verdict = output.strip().casefold()
    if verdict == "yes":
        return True
    if verdict == "no":
        return False
    raise PairError(f"presence output must be Yes or No, got {output!r}")


def _infer_subtask(record: dict) -> str:
    if "subtask" in record:
        return str(record["subtask"])
    return "presence" if record["output"].strip().casefold() in ("yes", "no") else "relation"


def parse_pair(record: dict) -> InstructionPair:
    for key in ("instruction", "output"):
        if not isinstance(record.get(key), str) or not record[key]:
            raise PairError(f"missing or empty field {key!r}")
    pair = InstructionPair(
        instruction=record["instruction"],
        output=record["output"],
        subtask=_infer_subtask(record),
    )
    if pair.subtask == "presence":
        parse_presence_output(pair.output)
    elif pair.subtask == "relation":
        parse_relation_output(pair.output)
    else:
        raise PairError(f"unknown subtask {pair.subtask!r}")
    return pair


@dataclass
class ValidationReport:
    total: int = 0
    counts_by_subtask: dict[str, int] = field(default_factory=dict)
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.total > 0 and not self.errors

    def to_text(self) -> str:
        lines = [f"pairs: {self.total}"]
        for subtask, count in sorted(self.counts_by_subtask.items()):
            lines.append(f"  {subtask}: {count}")
        if self.total == 0:
            lines.append("error: file contains no pairs")
        for line_number, message in self.errors:
            lines.append(f"line {line_number}: {message}")
        lines.append("OK" if self.ok else "FAILED")
        return "\n".join(lines)


def load_pairs(path: str | Path) -> list[InstructionPair]:
    pairs = []
    for number, record in _iter_records(path):
        if isinstance(record, Exception):
            raise PairError(f"line {number}: {record}")
        pairs.append(parse_pair(record))
    return pairs


def validate_pairs(path: str | Path) -> ValidationReport:
    """Check that every record has both fields and a parseable output."""
    report = ValidationReport()
    for number, record in _iter_records(path):
        report.total += 1
        if isinstance(record, Exception):
            report.errors.append((number, str(record)))
            continue
        try:
            pair = parse_pair(record)
        except PairError as exc:
            report.errors.append((number, str(exc)))
            continue
        report.counts_by_subtask[pair.subtask] = report.counts_by_subtask.get(pair.subtask, 0) + 1
    return report


def _iter_records(path: str | Path) -> Iterable[tuple[int, dict | Exception]]:
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield number, json.loads(line)
            except json.JSONDecodeError as exc:
                yield number, PairError(f"malformed JSON: {exc}")
