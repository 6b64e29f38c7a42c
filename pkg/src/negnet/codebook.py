"""The machine-readable codebook: label definitions, coding rules, the entity
space, topic definitions, an example bank, and prompt assembly.

Codebook file format (plain text, UTF-8), by section:

* ``[entities]`` — one per line: ``Name | kind | alias; alias`` (aliases optional)
* ``[relations]`` — one per line: ``Label: definition text``
* ``[rules]`` — one rule per line, optionally bulleted with ``- ``
* ``[topics]`` — one per line: ``id | Name | description`` (optional; an
  active topic space passed to :func:`load_codebook` takes precedence)
* ``[task:presence]`` / ``[task:relation]`` / ``[task:attribute]`` — task
  instruction text
* ``[format:presence]`` / ``[format:relation]`` / ``[format:attribute]`` —
  format instruction text
* ``[examples]`` — one JSON object per line: ``{"id", "subtask",
  "paragraph", "gold": [{"party1", "party2", "relation", "topic"?}]}``
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .corpus import Paragraph
from .model import (
    Entity,
    EntityKind,
    EntitySpace,
    Interaction,
    OutOfSpace,
    RelationType,
    normalize_entity,
)

if TYPE_CHECKING:
    from .topics import TopicSpace

log = logging.getLogger(__name__)


class Subtask(enum.Enum):
    PRESENCE = "presence"
    RELATION = "relation"
    ATTRIBUTE = "attribute"


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedExample:
    example_id: str
    subtask: Subtask
    paragraph: str
    gold: frozenset[Interaction]


@dataclass(frozen=True)
class Codebook:
    entity_space: EntitySpace
    relation_definitions: dict[RelationType, str]
    coding_rules: tuple[str, ...]
    topic_definitions: dict[str, tuple[str, str]]
    example_bank: tuple[AnnotatedExample, ...]
    task_instructions: dict[Subtask, str]
    format_instructions: dict[Subtask, str]

    def examples_for(self, subtask: Subtask, ids: Sequence[str]) -> list[AnnotatedExample]:
        """Select configured examples by id, keeping only the given subtask."""
        bank = {ex.example_id: ex for ex in self.example_bank}
        selected = []
        for example_id in ids:
            example = bank.get(example_id)
            if example is None:
                raise CodebookError(f"unknown example id: {example_id!r}")
            if example.subtask is subtask:
                selected.append(example)
        return selected

    def topic_id_by_name(self, name: str) -> str | None:
        wanted = name.strip().casefold()
        for topic_id, (topic_name, _) in self.topic_definitions.items():
            if topic_name.casefold() == wanted:
                return topic_id
        return None


SECTION_TASK = "Task Instruction"
SECTION_LABELS = "Label Definitions"
SECTION_RULES = "Coding Rules"
SECTION_EXAMPLES = "Examples"
SECTION_FORMAT = "Format Instruction"
SECTION_INSTANCE = "Inference Instance"


@dataclass(frozen=True)
class PromptBundle:
    """An assembled prompt: named sections in fixed order plus the rendering."""

    sections: tuple[tuple[str, str], ...]
    subtask: Subtask
    rendered: str


_SECTION_HEADER_RE = re.compile(r"^\[([a-z][a-z:_-]*)\]\s*$")


def _split_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        match = _SECTION_HEADER_RE.match(line.strip())
        if match:
            name = match.group(1)
            current = sections.setdefault(name, [])
            continue
        if current is not None:
            current.append(line)
    return sections


def _parse_entities(lines: list[str]) -> EntitySpace:
    entities = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) < 2:
            raise CodebookError(f"malformed entity line: {line!r}")
        name, kind_text = parts[0], parts[1]
        try:
            kind = EntityKind(kind_text.casefold())
        except ValueError:
            raise CodebookError(f"unknown entity kind {kind_text!r} for {name!r}") from None
        aliases = tuple(
            a.strip() for a in (parts[2].split(";") if len(parts) > 2 and parts[2] else []) if a.strip()
        )
        entities.append(Entity(canonical_name=name, kind=kind, aliases=aliases))
    return EntitySpace(entities)


def _parse_relations(lines: list[str]) -> dict[RelationType, str]:
    definitions: dict[RelationType, str] = {}
    current: RelationType | None = None
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        head, sep, rest = stripped.partition(":")
        relation = RelationType.parse(head) if sep else None
        if relation is not None:
            definitions[relation] = rest.strip()
            current = relation
        elif current is not None:
            definitions[current] = f"{definitions[current]} {stripped}".strip()
        else:
            raise CodebookError(f"relation definition outside any label: {stripped!r}")
    for relation in RelationType:
        if relation not in definitions:
            raise CodebookError(f"missing relation definition: {relation.label}")
    return definitions


def _parse_rules(lines: list[str]) -> tuple[str, ...]:
    rules = []
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        rules.append(stripped[2:].strip() if stripped.startswith("- ") else stripped)
    return tuple(rules)


def _parse_topic_lines(lines: list[str]) -> dict[str, tuple[str, str]]:
    topics: dict[str, tuple[str, str]] = {}
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise CodebookError(f"malformed topic line: {line!r}")
        topic_id, name, description = parts
        if topic_id in topics:
            raise CodebookError(f"duplicate topic id: {topic_id!r}")
        topics[topic_id] = (name, description)
    return topics


def _parse_examples(
    lines: list[str],
    space: EntitySpace,
    topics: dict[str, tuple[str, str]],
) -> tuple[AnnotatedExample, ...]:
    names_to_ids = {name.casefold(): tid for tid, (name, _) in topics.items()}
    examples = []
    seen_ids = set()
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CodebookError(f"malformed example record {number}: {exc}") from None
        example_id = record.get("id")
        if not example_id or example_id in seen_ids:
            raise CodebookError(f"example record {number}: missing or duplicate id")
        seen_ids.add(example_id)
        try:
            subtask = Subtask(record.get("subtask", ""))
        except ValueError:
            raise CodebookError(f"example {example_id}: unknown subtask") from None
        gold = set()
        for item in record.get("gold", []):
            relation = RelationType.parse(item.get("relation", ""))
            if relation is None:
                raise CodebookError(f"example {example_id}: unknown relation {item.get('relation')!r}")
            endpoints = []
            for side in ("party1", "party2"):
                resolved = normalize_entity(item.get(side, ""), space)
                if isinstance(resolved, OutOfSpace):
                    raise CodebookError(
                        f"example {example_id}: entity {item.get(side)!r} is not in the entity space"
                    )
                endpoints.append(resolved.canonical_name)
            topic_id = None
            if item.get("topic"):
                topic_id = names_to_ids.get(str(item["topic"]).casefold())
                if topic_id is None:
                    raise CodebookError(f"example {example_id}: unknown topic {item['topic']!r}")
            gold.add(
                Interaction(
                    head=endpoints[0],
                    tail=endpoints[1],
                    relation=relation,
                    topic=topic_id,
                    paragraph_ref=(f"example:{example_id}", 0),
                )
            )
        examples.append(
            AnnotatedExample(
                example_id=example_id,
                subtask=subtask,
                paragraph=record.get("paragraph", "").strip(),
                gold=frozenset(gold),
            )
        )
    return tuple(examples)


def load_codebook(path: str | Path, topic_space: "TopicSpace | None" = None) -> Codebook:
    """Load and validate a codebook file.

    Topic definitions come from the active topic space when one is given;
    otherwise from the file's ``[topics]`` section.
    """
    text = Path(path).read_text(encoding="utf-8")
    sections = _split_sections(text)
    known = {"entities", "relations", "rules", "topics", "examples"}
    for name in sections:
        if name not in known and not name.startswith(("task:", "format:")):
            log.warning("codebook: ignoring unknown section [%s]", name)

    space = _parse_entities(sections.get("entities", []))
    relations = _parse_relations(sections.get("relations", []))
    rules = _parse_rules(sections.get("rules", []))
    if topic_space is not None:
        topics = {t.topic_id: (t.name, t.description) for t in topic_space.topics}
        if len(topics) != len(topic_space.topics):
            raise CodebookError("duplicate topic id in topic space")
    else:
        topics = _parse_topic_lines(sections.get("topics", []))

    instructions: dict[Subtask, str] = {}
    formats: dict[Subtask, str] = {}
    for subtask in Subtask:
        task_lines = sections.get(f"task:{subtask.value}")
        if task_lines is not None:
            instructions[subtask] = "\n".join(task_lines).strip()
        format_lines = sections.get(f"format:{subtask.value}")
        if format_lines is not None:
            formats[subtask] = "\n".join(format_lines).strip()

    examples = _parse_examples(sections.get("examples", []), space, topics)
    return Codebook(
        entity_space=space,
        relation_definitions=relations,
        coding_rules=rules,
        topic_definitions=topics,
        example_bank=examples,
        task_instructions=instructions,
        format_instructions=formats,
    )


def triplets_to_json(triplets: Iterable[tuple[str, str, RelationType]]) -> str:
    """Serialize (head, tail, relation) triplets as the output wire format."""
    rows = sorted(triplets, key=lambda t: (t[0], t[1], t[2].label))
    return json.dumps(
        [{"Party1": h, "Party2": t, "Relation": r.label} for h, t, r in rows],
        ensure_ascii=False,
    )


def interactions_to_json(
    interactions: Iterable[Interaction],
    topic_names: dict[str, tuple[str, str]] | None = None,
) -> str:
    """Serialize interactions as output records; topics rendered by name when
    ``topic_names`` is given."""
    rows = sorted(interactions, key=lambda i: (i.head, i.tail, i.relation.label, i.topic or ""))
    records = []
    for item in rows:
        record = {"Party1": item.head, "Party2": item.tail, "Relation": item.relation.label}
        if topic_names is not None:
            named = topic_names.get(item.topic) if item.topic else None
            record["Topic"] = named[0] if named else None
        records.append(record)
    return json.dumps(records, ensure_ascii=False)


def _render_example(example: AnnotatedExample, codebook: Codebook) -> str:
    if example.subtask is Subtask.PRESENCE:
        output = "Yes" if example.gold else "No"
    elif example.subtask is Subtask.RELATION:
        output = triplets_to_json((i.head, i.tail, i.relation) for i in example.gold)
    else:
        output = interactions_to_json(example.gold, codebook.topic_definitions)
    return f"Paragraph:\n{example.paragraph}\nOutput:\n{output}"


def assemble_prompt(
    subtask: Subtask,
    codebook: Codebook,
    examples: Sequence[AnnotatedExample],
    paragraph: Paragraph | str,
    context: Iterable[tuple[str, str, RelationType]] | None = None,
) -> PromptBundle:
    """Assemble the prompt for one subtask over one paragraph.

    Sections always appear in the fixed order: task instruction, label
    definitions, coding rules, examples (omitted when none are given), format
    instruction, inference instance. The rendering is a pure function of the
    inputs.
    """
    if subtask is Subtask.ATTRIBUTE and context is None:
        raise ValueError("attribute subtask requires the triplets to label")
    task_text = codebook.task_instructions.get(subtask)
    if task_text is None:
        raise CodebookError(f"codebook has no task instruction for subtask {subtask.value!r}")
    format_text = codebook.format_instructions.get(subtask)
    if format_text is None:
        raise CodebookError(f"codebook has no format instruction for subtask {subtask.value!r}")

    if subtask is Subtask.ATTRIBUTE:
        if not codebook.topic_definitions:
            raise CodebookError("attribute subtask requires topic definitions")
        labels = "\n".join(
            [
                "Each topic must be one of the following.",
                *(
                    f"{name}: {description}"
                    for _, (name, description) in sorted(codebook.topic_definitions.items())
                ),
            ]
        )
    else:
        entity_list = json.dumps(
            sorted(e.canonical_name for e in codebook.entity_space), ensure_ascii=False
        )
        labels = "\n".join(
            [
                f"Each party should be a country or a coalition, in the list {entity_list}",
                "The variable 'interaction' can take the following values.",
                *(
                    f"{relation.label}: {codebook.relation_definitions[relation]}"
                    for relation in RelationType
                ),
            ]
        )

    rules = "\n".join(["Further coding rules:", *(f"- {rule}" for rule in codebook.coding_rules)])

    text = paragraph.text if isinstance(paragraph, Paragraph) else paragraph
    if subtask is Subtask.ATTRIBUTE:
        instance = f"Paragraph:\n{text}\nInteractions:\n{triplets_to_json(context or [])}\nOutput:"
    else:
        instance = f"Paragraph:\n{text}\nOutput:"

    sections: list[tuple[str, str]] = [
        (SECTION_TASK, task_text),
        (SECTION_LABELS, labels),
        (SECTION_RULES, rules),
    ]
    if examples:
        sections.append(
            (SECTION_EXAMPLES, "\n\n".join(_render_example(ex, codebook) for ex in examples))
        )
    sections.append((SECTION_FORMAT, format_text))
    sections.append((SECTION_INSTANCE, instance))

    rendered = "\n\n".join(f"### {name}\n{body}" for name, body in sections)
    return PromptBundle(sections=tuple(sections), subtask=subtask, rendered=rendered)
