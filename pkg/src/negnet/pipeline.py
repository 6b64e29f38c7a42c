"""The three-step annotation pipeline over daily-report paragraphs:
interaction-presence filtering, relation extraction, attribute prediction,
followed by rule closure and deduplication.

The search window is exactly one paragraph. Paragraph failures are recorded
and never abort the run; raw model text is retained verbatim for every call.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .codebook import Codebook, Subtask, assemble_prompt
from .corpus import Paragraph, Report, ReportKind
from .gateway import Gateway, GatewayError
from .model import (
    Interaction,
    OutOfSpace,
    Provenance,
    RelationType,
    dedupe,
    normalize_entity,
)
from .rules import RuleConfig, close_to_fixpoint

log = logging.getLogger(__name__)

FORMAT_REMINDER = {
    Subtask.PRESENCE: "\n\nReminder: answer with a single word, Yes or No.",
    Subtask.RELATION: (
        "\n\nReminder: respond with only a JSON list of objects with keys "
        '"Party1", "Party2", and "Relation".'
    ),
    Subtask.ATTRIBUTE: (
        "\n\nReminder: respond with only a JSON list of objects with keys "
        '"Party1", "Party2", "Relation", and "Topic".'
    ),
}


class Mode(enum.Enum):
    DATA_RICH = "data_rich"
    DATA_SCARCE = "data_scarce"


Triplet = tuple[str, str, RelationType]


@dataclass
class ParagraphRecord:
    """Everything the pipeline saw and decided for one paragraph."""

    paragraph_ref: tuple[str, int]
    presence: bool | None = None
    raw_responses: dict[str, list[str]] = field(default_factory=dict)
    triplets: tuple[Triplet, ...] = ()
    interactions: tuple[Interaction, ...] = ()
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


@dataclass
class AnnotationRun:
    """The full record of one pipeline execution."""

    run_id: str
    mode: Mode
    model_id: str
    records: list[ParagraphRecord] = field(default_factory=list)
    dataset_path: str | None = None

    def interactions(self) -> list[Interaction]:
        return [item for record in self.records for item in record.interactions]

    def errors(self) -> list[str]:
        return [f"{r.paragraph_ref}: {e}" for r in self.records for e in r.errors]

    def warnings(self) -> list[str]:
        return [f"{r.paragraph_ref}: {w}" for r in self.records for w in r.warnings]


_VERDICT_RE = re.compile(r"\b(yes|no)\b")
_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def _parse_verdict(text: str) -> bool | None:
    match = _VERDICT_RE.search(text.casefold())
    if match is None:
        return None
    return match.group(1) == "yes"


def _parse_json_records(text: str) -> list[dict] | None:
    cleaned = _FENCE_RE.sub("", text.strip())
    start = cleaned.find("[")
    if start < 0:
        return None
    try:
        parsed, _ = json.JSONDecoder().raw_decode(cleaned[start:])
    except json.JSONDecodeError:
        return None
    if not isinstance(parsed, list) or not all(isinstance(row, dict) for row in parsed):
        return None
    return parsed


def _get_field(record: Mapping, name: str) -> str:
    for key, value in record.items():
        if str(key).casefold() == name.casefold():
            return str(value) if value is not None else ""
    return ""


def _call_with_retry(
    gateway: Gateway,
    prompt: str,
    subtask: Subtask,
    parse,
    raws: list[str],
):
    """One call plus exactly one retry with a format-reminder suffix."""
    response = gateway.complete(prompt)
    raws.append(response)
    parsed = parse(response)
    if parsed is not None:
        return parsed
    response = gateway.complete(prompt + FORMAT_REMINDER[subtask])
    raws.append(response)
    return parse(response)


def detect_interactions(
    paragraph: Paragraph,
    codebook: Codebook,
    gateway: Gateway,
    mode: Mode,
    record: ParagraphRecord,
) -> bool:
    """Presence filter; an unparseable verdict after one retry fails open."""
    bundle = assemble_prompt(Subtask.PRESENCE, codebook, [], paragraph)
    raws = record.raw_responses.setdefault("presence", [])
    verdict = _call_with_retry(gateway, bundle.rendered, Subtask.PRESENCE, _parse_verdict, raws)
    if verdict is None:
        record.warnings += ("presence verdict unparseable twice; defaulting to true",)
        return True
    return verdict


def extract_relations(
    paragraph: Paragraph,
    codebook: Codebook,
    gateway: Gateway,
    mode: Mode,
    examples: Sequence = (),
    fuzzy_threshold: float = 0.9,
    record: ParagraphRecord | None = None,
) -> set[Triplet]:
    """Extract (sender, recipient, relation) triplets from one paragraph.

    Party names are normalized against the entity space; names that resolve
    nowhere are kept verbatim and flagged downstream. Records with an unknown
    relation are dropped with a warning; malformed output gets one retry with
    a format reminder, then a paragraph-level parse error.
    """
    record = record if record is not None else ParagraphRecord(paragraph_ref=("", paragraph.index))
    bundle = assemble_prompt(Subtask.RELATION, codebook, list(examples), paragraph)
    raws = record.raw_responses.setdefault("relation", [])
    rows = _call_with_retry(gateway, bundle.rendered, Subtask.RELATION, _parse_json_records, raws)
    if rows is None:
        record.errors += ("relation extraction output unparseable after retry",)
        return set()

    triplets: set[Triplet] = set()
    for row in rows:
        relation_text = _get_field(row, "Relation")
        relation = RelationType.parse(relation_text) if relation_text else None
        if relation is None:
            record.warnings += (f"unknown relation {relation_text!r}; record dropped",)
            continue
        names = []
        ok = True
        for key in ("Party1", "Party2"):
            raw_name = _get_field(row, key).strip()
            if not raw_name:
                record.warnings += (f"record missing {key}; dropped",)
                ok = False
                break
            resolved = normalize_entity(raw_name, codebook.entity_space, fuzzy_threshold)
            names.append(resolved.canonical_name if not isinstance(resolved, OutOfSpace) else resolved.raw)
        if not ok:
            continue
        if names[0] == names[1]:
            record.warnings += (f"self-interaction for {names[0]!r}; record dropped",)
            continue
        triplets.add((names[0], names[1], relation))
    return triplets


def predict_attributes(
    paragraph: Paragraph,
    triplets: Iterable[Triplet],
    codebook: Codebook,
    gateway: Gateway,
    examples: Sequence = (),
    record: ParagraphRecord | None = None,
) -> set[Interaction]:
    """Label all of a paragraph's triplets with topics in one call.

    A returned topic must name an existing topic (case-insensitive); anything
    else leaves that interaction's topic unset with a warning.
    """
    record = record if record is not None else ParagraphRecord(paragraph_ref=("", paragraph.index))
    triplets = set(triplets)
    if not triplets:
        return set()
    bundle = assemble_prompt(Subtask.ATTRIBUTE, codebook, list(examples), paragraph, context=triplets)
    raws = record.raw_responses.setdefault("attribute", [])
    rows = _call_with_retry(gateway, bundle.rendered, Subtask.ATTRIBUTE, _parse_json_records, raws)

    topics_by_triplet: dict[tuple, str | None] = {}
    if rows is None:
        record.errors += ("attribute prediction output unparseable after retry; topics left unset",)
    else:
        for row in rows:
            relation = RelationType.parse(_get_field(row, "Relation"))
            key = (
                _get_field(row, "Party1").strip().casefold(),
                _get_field(row, "Party2").strip().casefold(),
                relation,
            )
            topic_name = _get_field(row, "Topic").strip()
            topic_id = codebook.topic_id_by_name(topic_name) if topic_name else None
            if topic_name and topic_id is None:
                record.warnings += (f"unknown topic {topic_name!r}; left unset",)
            topics_by_triplet[key] = topic_id

    interactions = set()
    for head, tail, relation in triplets:
        key = (head.casefold(), tail.casefold(), relation)
        topic_id = topics_by_triplet.get(key)
        if rows is not None and key not in topics_by_triplet:
            record.warnings += (f"no topic returned for ({head}, {tail}, {relation.label})",)
        interactions.add(
            Interaction(
                head=head,
                tail=tail,
                relation=relation,
                topic=topic_id,
                paragraph_ref=record.paragraph_ref,
            )
        )
    return interactions


def _annotate_paragraph(
    report: Report,
    paragraph: Paragraph,
    codebook: Codebook,
    gateway: Gateway,
    mode: Mode,
    rule_config: RuleConfig,
    examples_by_subtask: Mapping[Subtask, Sequence],
    fuzzy_threshold: float,
) -> ParagraphRecord:
    record = ParagraphRecord(paragraph_ref=(report.report_id, paragraph.index))
    try:
        record.presence = detect_interactions(paragraph, codebook, gateway, mode, record)
        if not record.presence:
            return record
        triplets = extract_relations(
            paragraph,
            codebook,
            gateway,
            mode,
            examples_by_subtask.get(Subtask.RELATION, ()),
            fuzzy_threshold,
            record,
        )
        record.triplets = tuple(sorted(triplets, key=lambda t: (t[0], t[1], t[2].label)))
        if not triplets:
            return record
        stated = predict_attributes(
            paragraph,
            triplets,
            codebook,
            gateway,
            examples_by_subtask.get(Subtask.ATTRIBUTE, ()),
            record,
        )
        # Closure rules operate on the coded label space only; out-of-space
        # mentions are kept as flagged evidence but derive nothing.
        in_space = {i for i in stated if i.head in codebook.entity_space and i.tail in codebook.entity_space}
        flagged = stated - in_space
        closed = close_to_fixpoint(in_space, rule_config)
        final = dedupe(list(closed) + list(flagged))
        record.interactions = tuple(
            sorted(
                final,
                key=lambda i: (i.head, i.tail, i.relation.label, i.topic or "", i.derived.value),
            )
        )
    except GatewayError as exc:
        record.errors += (f"gateway failure: {exc}",)
    return record


def annotate_corpus(
    reports: Sequence[Report],
    codebook: Codebook,
    gateway: Gateway,
    mode: Mode,
    rule_config: RuleConfig = RuleConfig(),
    *,
    run_id: str,
    examples_by_subtask: Mapping[Subtask, Sequence] | None = None,
    fuzzy_threshold: float = 0.9,
    workers: int = 1,
) -> AnnotationRun:
    """Annotate every paragraph of every daily report.

    Data-rich mode sends example-free prompts (the tuned model already knows
    the patterns); data-scarce mode includes the configured examples. Summary
    reports are skipped. Paragraphs are independent; with ``workers > 1``
    they are processed concurrently and reassembled in corpus order.
    """
    examples = dict(examples_by_subtask or {})
    if mode is Mode.DATA_RICH:
        examples = {}
    run = AnnotationRun(run_id=run_id, mode=mode, model_id=gateway.config.model_id)
    tasks = [
        (report, paragraph)
        for report in reports
        if report.kind is ReportKind.DAILY
        for paragraph in report.paragraphs
    ]

    def _one(task: tuple[Report, Paragraph]) -> ParagraphRecord:
        report, paragraph = task
        return _annotate_paragraph(
            report, paragraph, codebook, gateway, mode, rule_config, examples, fuzzy_threshold
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            run.records = list(pool.map(_one, tasks))
    else:
        run.records = [_one(task) for task in tasks]
    return run


def run_to_records(run: AnnotationRun, codebook: Codebook) -> list[dict]:
    """Flatten a run into the line-delimited annotation schema."""
    rows = []
    for record in run.records:
        report_id, paragraph_index = record.paragraph_ref
        for item in record.interactions:
            flags = sorted(
                name
                for name, value in (("party1", item.head), ("party2", item.tail))
                if value not in codebook.entity_space
            )
            rows.append(
                {
                    "run_id": run.run_id,
                    "report_id": report_id,
                    "paragraph_index": paragraph_index,
                    "party1": item.head,
                    "party2": item.tail,
                    "relation": item.relation.label,
                    "topic": item.topic,
                    "derived": item.derived.value,
                    "out_of_space_flags": flags,
                    "model_id": run.model_id,
                }
            )
    return rows


def records_to_interactions(rows: Iterable[dict]) -> set[Interaction]:
    """Rebuild interactions from annotation-file records."""
    items = set()
    for row in rows:
        relation = RelationType.parse(row["relation"])
        if relation is None:
            raise ValueError(f"unknown relation in record: {row['relation']!r}")
        items.add(
            Interaction(
                head=row["party1"],
                tail=row["party2"],
                relation=relation,
                topic=row.get("topic"),
                paragraph_ref=(row["report_id"], int(row["paragraph_index"])),
                derived=Provenance(row.get("derived", "stated")),
            )
        )
    return items
