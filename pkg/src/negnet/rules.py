"""Multi-interaction coding rules applied to a fixpoint, plus a compliance
audit of any interaction set against those rules.

Three rules, all scoped to a single paragraph:

* bidirectionality — agreement and on-behalf-of interactions carry their
  reverse direction;
* transitivity — within a group of mutually agreeing parties, every ordered
  pair is coded;
* derivation — parties jointly supporting or opposing the same target also
  agree with each other.

All closure operations are inflationary and monotone, so the fixpoint is
independent of the order the rules are applied in.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import Interaction, Provenance, RelationType


class Rule(enum.Enum):
    BIDIRECTIONALITY = "bidirectionality"
    TRANSITIVITY = "transitivity"
    DERIVATION = "derivation"


ALL_RULES: frozenset[Rule] = frozenset(Rule)

_DERIVABLE = (RelationType.SUPPORT, RelationType.OPPOSITION)


@dataclass(frozen=True)
class RuleConfig:
    """Which rules are enabled; scope is always a single paragraph."""

    enabled: frozenset[Rule] = ALL_RULES


class ClosureError(RuntimeError):
    """Raised when the fixpoint iteration cap is exceeded (unreachable for
    well-formed inputs: the rules only ever add to a finite universe)."""


def close_bidirectional(interactions: set[Interaction]) -> set[Interaction]:
    """Add the reverse of every interaction with a bidirectional relation."""
    closed = set(interactions)
    for item in interactions:
        if item.relation.bidirectional:
            closed.add(item.reversed(Provenance.CLOSURE_BIDIRECTIONAL))
    return closed


def close_transitive_agreement(interactions: set[Interaction]) -> set[Interaction]:
    """Complete every mutual-agreement group to all ordered pairs.

    Groups are connected components of the mutual-agreement graph, computed
    per paragraph and per topic.
    """
    closed = set(interactions)
    for (ref, topic), pairs in _agreement_pairs(interactions).items():
        mutual = {(a, b) for (a, b) in pairs if (b, a) in pairs}
        for component in _components(mutual):
            for a in component:
                for b in component:
                    if a != b:
                        closed.add(
                            Interaction(
                                a, b, RelationType.AGREEMENT, topic, ref,
                                Provenance.CLOSURE_TRANSITIVE,
                            )
                        )
    return closed


def derive_agreements(interactions: set[Interaction]) -> set[Interaction]:
    """Add agreements among all parties supporting/opposing the same target.

    The derived agreement inherits the group's topic only when the group is
    unanimous about it; otherwise the topic is left unset.
    """
    closed = set(interactions)
    groups: dict[tuple, list[Interaction]] = defaultdict(list)
    for item in interactions:
        if item.relation in _DERIVABLE:
            groups[(item.paragraph_ref, item.tail, item.relation)].append(item)
    for (ref, _target, _relation), members in groups.items():
        senders = sorted({m.head for m in members})
        if len(senders) < 2:
            continue
        topics = {m.topic for m in members}
        topic = next(iter(topics)) if len(topics) == 1 else None
        for a in senders:
            for b in senders:
                if a != b:
                    closed.add(
                        Interaction(
                            a, b, RelationType.AGREEMENT, topic, ref,
                            Provenance.CLOSURE_DERIVATION,
                        )
                    )
    return closed


_RULE_FUNCTIONS = {
    Rule.BIDIRECTIONALITY: close_bidirectional,
    Rule.TRANSITIVITY: close_transitive_agreement,
    Rule.DERIVATION: derive_agreements,
}


def close_to_fixpoint(
    interactions: Iterable[Interaction],
    config: RuleConfig = RuleConfig(),
    max_rounds: int = 10,
    rule_order: Sequence[Rule] | None = None,
) -> set[Interaction]:
    """Apply the enabled rules until no rule adds an interaction.

    ``rule_order`` only changes the application order within a round; the
    fixpoint itself is order-independent.
    """
    order = tuple(rule_order) if rule_order is not None else tuple(Rule)
    current = set(interactions)
    for _ in range(max_rounds):
        step = current
        for rule in order:
            if rule in config.enabled:
                step = _RULE_FUNCTIONS[rule](step)
        if len(step) == len(current):
            return step
        current = step
    raise ClosureError(f"closure did not stabilize within {max_rounds} rounds")


@dataclass(frozen=True)
class RuleCompliance:
    satisfied: int
    obligated: int

    @property
    def fraction(self) -> float:
        return 1.0 if self.obligated == 0 else self.satisfied / self.obligated


@dataclass(frozen=True)
class ComplianceReport:
    bidirectionality: RuleCompliance
    transitivity: RuleCompliance
    derivation: RuleCompliance

    def fractions(self) -> dict[Rule, float]:
        return {
            Rule.BIDIRECTIONALITY: self.bidirectionality.fraction,
            Rule.TRANSITIVITY: self.transitivity.fraction,
            Rule.DERIVATION: self.derivation.fraction,
        }


def audit_compliance(interactions: Iterable[Interaction]) -> ComplianceReport:
    """Measure how much of each rule's obligations the set satisfies.

    Obligations are computed from the set itself: every bidirectional
    interaction obligates both directions (same topic); every mutual-agreement
    component obligates all its ordered pairs (same topic); every group of two
    or more co-supporters/co-opposers obligates an agreement between each
    ordered pair (any topic). An empty obligation set counts as full
    compliance.
    """
    items = set(interactions)
    present = {(i.paragraph_ref, i.head, i.tail, i.relation, i.topic) for i in items}

    obligated = set()
    for item in items:
        if item.relation.bidirectional:
            obligated.add((item.paragraph_ref, item.head, item.tail, item.relation, item.topic))
            obligated.add((item.paragraph_ref, item.tail, item.head, item.relation, item.topic))
    bidirectional = RuleCompliance(len(obligated & present), len(obligated))

    obligated = set()
    for (ref, topic), pairs in _agreement_pairs(items).items():
        mutual = {(a, b) for (a, b) in pairs if (b, a) in pairs}
        for component in _components(mutual):
            for a in component:
                for b in component:
                    if a != b:
                        obligated.add((ref, a, b, RelationType.AGREEMENT, topic))
    transitive = RuleCompliance(len(obligated & present), len(obligated))

    # Derivation obligations are topic-agnostic: any agreement between the
    # pair in the same paragraph satisfies them.
    agreed_pairs = {
        (i.paragraph_ref, i.head, i.tail)
        for i in items
        if i.relation is RelationType.AGREEMENT
    }
    groups: dict[tuple, set[str]] = defaultdict(set)
    for item in items:
        if item.relation in _DERIVABLE:
            groups[(item.paragraph_ref, item.tail, item.relation)].add(item.head)
    obligated = set()
    for (ref, _target, _relation), senders in groups.items():
        if len(senders) < 2:
            continue
        for a in senders:
            for b in senders:
                if a != b:
                    obligated.add((ref, a, b))
    derivation = RuleCompliance(len(obligated & agreed_pairs), len(obligated))

    return ComplianceReport(bidirectional, transitive, derivation)


def _agreement_pairs(
    interactions: Iterable[Interaction],
) -> dict[tuple, set[tuple[str, str]]]:
    pairs: dict[tuple, set[tuple[str, str]]] = defaultdict(set)
    for item in interactions:
        if item.relation is RelationType.AGREEMENT:
            pairs[(item.paragraph_ref, item.topic)].add((item.head, item.tail))
    return pairs


def _components(edges: set[tuple[str, str]]) -> list[set[str]]:
    neighbors: dict[str, set[str]] = defaultdict(set)
    for a, b in edges:
        neighbors[a].add(b)
        neighbors[b].add(a)
    seen: set[str] = set()
    components = []
    for node in sorted(neighbors):
        if node in seen:
            continue
        component = {node}
        frontier = [node]
        while frontier:
            for other in neighbors[frontier.pop()]:
                if other not in component:
                    component.add(other)
                    frontier.append(other)
        seen |= component
        components.append(component)
    return components
