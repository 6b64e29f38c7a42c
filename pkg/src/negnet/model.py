"""Core domain types: entities, relation types, interactions, and the
predefined entity space with normalization against it.

The interaction is the dataset's atom: a sender, a recipient, a relation
type, and an optional topic, anchored to the paragraph it was coded from.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union


class EntityKind(enum.Enum):
    NATION_STATE = "nation_state"
    COALITION = "coalition"


class RelationType(enum.Enum):
    """The five coded interaction types between negotiation parties."""

    ON_BEHALF_OF = "On behalf of"
    SUPPORT = "Support"
    AGREEMENT = "Agreement"
    DELAYING_PROPOSAL = "Delaying proposal"
    OPPOSITION = "Opposition"

    @property
    def label(self) -> str:
        return self.value

    @property
    def bidirectional(self) -> bool:
        """Agreement and On behalf of are coded in both directions."""
        return self in (RelationType.AGREEMENT, RelationType.ON_BEHALF_OF)

    @classmethod
    def parse(cls, raw: str) -> RelationType | None:
        """Match a relation label case-insensitively, ignoring separators."""
        return _RELATION_LOOKUP.get(re.sub(r"[\s_\-]+", "", raw).casefold())


_RELATION_LOOKUP = {
    re.sub(r"[\s_\-]+", "", member.value).casefold(): member for member in RelationType
}


class Provenance(enum.Enum):
    """How an interaction entered the dataset.

    Declaration order is the preference order used by :func:`dedupe`:
    a directly stated interaction wins over any closure-derived variant.
    """

    STATED = "stated"
    CLOSURE_BIDIRECTIONAL = "closure_bidirectional"
    CLOSURE_TRANSITIVE = "closure_transitive"
    CLOSURE_DERIVATION = "closure_derivation"


_PROVENANCE_RANK = {member: rank for rank, member in enumerate(Provenance)}


@dataclass(frozen=True)
class Interaction:
    """One coded interaction between two parties within one paragraph.

    Set semantics ignore ``derived``: two provenance variants of the same
    (head, tail, relation, topic, paragraph_ref) are the same interaction.
    """

    head: str
    tail: str
    relation: RelationType
    topic: str | None
    paragraph_ref: tuple[str, int]
    derived: Provenance = field(default=Provenance.STATED, compare=False)

    def __post_init__(self) -> None:
        if not self.head or not self.tail:
            raise ValueError("interaction endpoints must be non-empty")
        if self.head == self.tail:
            raise ValueError(f"self-interaction not allowed: {self.head!r}")

    def reversed(self, derived: Provenance) -> Interaction:
        return Interaction(
            self.tail, self.head, self.relation, self.topic, self.paragraph_ref, derived
        )


@dataclass(frozen=True)
class Entity:
    canonical_name: str
    kind: EntityKind
    aliases: tuple[str, ...] = ()
    in_space: bool = True


@dataclass(frozen=True)
class OutOfSpace:
    """A party mention that matched nothing in the predefined entity space."""

    raw: str


class EntitySpaceError(ValueError):
    pass


class EntitySpace:
    """The predefined space of parties and coalitions, with an alias index.

    The index covers every alias and every canonical name; no alias may map
    to two different canonical names.
    """

    def __init__(self, entities: Iterable[Entity]) -> None:
        self.entities: tuple[Entity, ...] = tuple(entities)
        self.alias_index: dict[str, str] = {}
        self._by_name: dict[str, Entity] = {}
        seen = set()
        for entity in self.entities:
            key = entity.canonical_name.casefold()
            if key in seen:
                raise EntitySpaceError(f"duplicate canonical name: {entity.canonical_name!r}")
            seen.add(key)
            self._by_name[entity.canonical_name] = entity
        for entity in self.entities:
            for alias in (entity.canonical_name, *entity.aliases):
                key = clean_name(alias)
                owner = self.alias_index.get(key)
                if owner is not None and owner != entity.canonical_name:
                    raise EntitySpaceError(
                        f"alias {alias!r} maps to both {owner!r} and {entity.canonical_name!r}"
                    )
                self.alias_index[key] = entity.canonical_name

    def get(self, canonical_name: str) -> Entity | None:
        return self._by_name.get(canonical_name)

    def __contains__(self, canonical_name: str) -> bool:
        return canonical_name in self._by_name

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self.entities)


# Fixed substitution table for bytes in the 0x80-0x9F block that turn up as
# generation artifacts in party names (e.g. 0x9F for "ü", 0x96 for "ñ").
# Bounded on purpose: anything outside the table is left alone.
_BYTE_REPAIRS = {
    "\x80": "Ä", "\x81": "Å", "\x82": "Ç", "\x83": "É", "\x84": "Ñ",
    "\x85": "Ö", "\x86": "Ü", "\x87": "á", "\x88": "à", "\x89": "â",
    "\x8a": "ä", "\x8b": "ã", "\x8c": "å", "\x8d": "ç", "\x8e": "é",
    "\x8f": "è", "\x90": "ê", "\x91": "ë", "\x92": "í", "\x93": "ì",
    "\x94": "î", "\x95": "ï", "\x96": "ñ", "\x97": "ó", "\x98": "ò",
    "\x99": "ô", "\x9a": "ö", "\x9b": "õ", "\x9c": "ú", "\x9d": "ù",
    "\x9e": "û", "\x9f": "ü",
}

_ESCAPE_RE = re.compile(r"\\x([0-9a-fA-F]{2})")


def repair_mojibake(text: str) -> str:
    """Substitute known stray bytes, both as raw characters and as literal
    ``\\xNN`` escape text, with the letters they stand for."""

    def _sub(match: re.Match[str]) -> str:
        char = chr(int(match.group(1), 16))
        return _BYTE_REPAIRS.get(char, match.group(0))

    text = _ESCAPE_RE.sub(_sub, text)
    return "".join(_BYTE_REPAIRS.get(char, char) for char in text)


def clean_name(raw: str) -> str:
    """Canonical lookup key for a party mention: mojibake repaired,
    case-folded, whitespace collapsed, leading article 'the' stripped."""
    text = repair_mojibake(raw).casefold()
    text = " ".join(text.split())
    if text.startswith("the "):
        text = text[4:]
    return text


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def edit_similarity(a: str, b: str) -> float:
    """Normalized edit similarity: 1 - distance / max length."""
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def normalize_entity(
    raw_name: str, space: EntitySpace, fuzzy_threshold: float = 0.9
) -> Union[Entity, OutOfSpace]:
    """Resolve a raw party mention against the entity space.

    Exact alias matches (after cleaning) win; otherwise the canonical name
    with the highest edit similarity is taken when it reaches the threshold,
    with ties broken by lexicographic canonical name. Anything else comes
    back as an :class:`OutOfSpace` marker carrying the raw string.
    """
    if raw_name is None or not raw_name.strip():
        raise ValueError("entity name must be non-empty")
    cleaned = clean_name(raw_name)
    canonical = space.alias_index.get(cleaned)
    if canonical is not None:
        entity = space.get(canonical)
        assert entity is not None
        return entity
    best_sim = -1.0
    best: list[Entity] = []
    for entity in space:
        sim = edit_similarity(cleaned, entity.canonical_name.casefold())
        if sim > best_sim:
            best_sim, best = sim, [entity]
        elif sim == best_sim:
            best.append(entity)
    if best and best_sim >= fuzzy_threshold:
        return min(best, key=lambda e: e.canonical_name)
    return OutOfSpace(raw_name)


def dedupe(items: Iterable[Interaction]) -> set[Interaction]:
    """Collapse duplicates, preferring stated over closure-derived variants.

    Order-insensitive: among variants of one interaction the one with the
    highest-priority provenance is kept.
    """
    best: dict[Interaction, Interaction] = {}
    for item in items:
        kept = best.get(item)
        if kept is None or _PROVENANCE_RANK[item.derived] < _PROVENANCE_RANK[kept.derived]:
            best[item] = item
    return set(best.values())
