"""The dynamic topic space: a versioned set of topic clusters over word
embeddings that grows across corpus stages.

The base space is built by seeded k-means over topic words extracted from
summary reports. In later stages each newly extracted word either joins the
closest existing cluster — when its similarity to the cluster's centroid
reaches the weakest member's similarity — or seeds a new topic.
"""

from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Report, ReportKind
from .gateway import Gateway, normalize_vector

log = logging.getLogger(__name__)

TOPIC_WORD_PROMPT = (
    "List the main negotiation topic words or short phrases discussed in this "
    "summary report. Respond with a comma-separated list only.\n\nReport:\n{body}"
)

TOPIC_NAME_PROMPT = (
    "Propose a concise name and a one-sentence description for a negotiation "
    "topic covering these terms: {words}.\nRespond in the form:\n"
    "Name: <name>\nDescription: <description>"
)


class TopicSpaceError(ValueError):
    pass


@dataclass
class Topic:
    topic_id: str
    name: str
    description: str
    member_words: list[tuple[str, tuple[float, ...]]]
    centroid: tuple[float, ...]
    stage_added: int
    human_revised: bool = False
    revision: int = 0

    def recompute_centroid(self) -> None:
        if not self.member_words:
            raise TopicSpaceError(f"topic {self.topic_id} has no member words")
        mean = np.mean([vector for _, vector in self.member_words], axis=0)
        self.centroid = normalize_vector(mean.tolist())


@dataclass
class TopicSpace:
    version: int
    topics: list[Topic]
    embedding_dim: int
    k: int
    seed: int

    def __post_init__(self) -> None:
        names = [t.name.casefold() for t in self.topics]
        if len(names) != len(set(names)):
            raise TopicSpaceError("topic names must be unique (case-insensitive)")
        for topic in self.topics:
            for _, vector in topic.member_words:
                if len(vector) != self.embedding_dim:
                    raise TopicSpaceError(
                        f"topic {topic.topic_id}: embedding dimension "
                        f"{len(vector)} != {self.embedding_dim}"
                    )

    def get(self, topic_id: str) -> Topic | None:
        for topic in self.topics:
            if topic.topic_id == topic_id:
                return topic
        return None

    def find_by_name(self, name: str) -> Topic | None:
        wanted = name.strip().casefold()
        for topic in self.topics:
            if topic.name.casefold() == wanted:
                return topic
        return None

    def member_word_set(self) -> set[str]:
        return {word.casefold() for t in self.topics for word, _ in t.member_words}

    def next_topic_id(self) -> str:
        taken = {t.topic_id for t in self.topics}
        n = len(self.topics) + 1
        while f"t{n:03d}" in taken:
            n += 1
        return f"t{n:03d}"

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "embedding_dim": self.embedding_dim,
            "k": self.k,
            "seed": self.seed,
            "topics": [
                {
                    "topic_id": t.topic_id,
                    "name": t.name,
                    "description": t.description,
                    "stage_added": t.stage_added,
                    "human_revised": t.human_revised,
                    "revision": t.revision,
                    "members": [
                        {"word": word, "embedding": list(vector)}
                        for word, vector in t.member_words
                    ],
                    "centroid": list(t.centroid),
                }
                for t in self.topics
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "TopicSpace":
        topics = [
            Topic(
                topic_id=t["topic_id"],
                name=t["name"],
                description=t["description"],
                member_words=[(m["word"], tuple(m["embedding"])) for m in t["members"]],
                centroid=tuple(t["centroid"]),
                stage_added=t["stage_added"],
                human_revised=t.get("human_revised", False),
                revision=t.get("revision", 0),
            )
            for t in data["topics"]
        ]
        return cls(
            version=data["version"],
            topics=topics,
            embedding_dim=data["embedding_dim"],
            k=data["k"],
            seed=data["seed"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "TopicSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def extract_topic_words(summary_reports: Sequence[Report], gateway: Gateway) -> list[str]:
    """One extraction call per summary report; words come back lower-cased,
    deduplicated across reports, in first-seen order."""
    words: list[str] = []
    seen: set[str] = set()
    for report in summary_reports:
        if report.kind is not ReportKind.SUMMARY:
            raise TopicSpaceError(f"report {report.report_id} is not a summary report")
        try:
            response = gateway.complete(TOPIC_WORD_PROMPT.format(body=report.body))
        except Exception as exc:
            log.warning("topic-word extraction failed for %s: %s", report.report_id, exc)
            continue
        for token in re.split(r"[,;\n]", response):
            word = token.strip().strip("-•* ").casefold()
            if word and word not in seen:
                seen.add(word)
                words.append(word)
    return words


def kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 100, n_init: int = 10
) -> np.ndarray:
    """Seeded k-means labels for ``points``; deterministic for a given seed.

    Runs ``n_init`` restarts with k-means++ initialization and keeps the
    lowest-inertia result. A cluster that empties during iteration is
    reseeded to the point farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if k <= 0:
        raise ValueError("k must be > 0")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    best_labels: np.ndarray | None = None
    best_inertia = np.inf
    for _ in range(n_init):
        labels, inertia = _kmeans_once(points, k, rng, max_iter)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    assert best_labels is not None
    return best_labels


def _kmeans_once(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int
) -> tuple[np.ndarray, float]:
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=float)
    centers[0] = points[int(rng.integers(n))]
    for i in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - centers[None, :i, :]) ** 2).sum(axis=2), axis=1
        )
        total = d2.sum()
        if total == 0:
            centers[i] = points[int(rng.integers(n))]
        else:
            centers[i] = points[int(rng.choice(n, p=d2 / total))]

    labels = np.full(n, -1, dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for cluster in range(k):
            if (new_labels == cluster).any():
                continue
            assigned = d2[np.arange(n), new_labels]
            farthest = int(assigned.argmax())
            centers[cluster] = points[farthest]
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
        if (new_labels == labels).all():
            break
        labels = new_labels
        for cluster in range(k):
            centers[cluster] = points[labels == cluster].mean(axis=0)
    inertia = float(
        (((points - centers[labels]) ** 2).sum(axis=1)).sum()
    )
    return labels, inertia


_NAME_RE = re.compile(r"^name\s*:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_DESCRIPTION_RE = re.compile(r"^description\s*:\s*(.+)$", re.IGNORECASE | re.MULTILINE)


def _name_topic(words: Sequence[str], gateway: Gateway) -> tuple[str, str]:
    prompt = TOPIC_NAME_PROMPT.format(words=", ".join(words))
    response = gateway.complete(prompt)
    name_match = _NAME_RE.search(response)
    description_match = _DESCRIPTION_RE.search(response)
    if name_match and description_match:
        return name_match.group(1).strip(), description_match.group(1).strip()
    log.warning("could not parse topic name from response %r; using fallback", response[:80])
    return words[0].title(), f"Topic covering {', '.join(words)}."


def _unique_name(name: str, space: TopicSpace, skip_id: str | None = None) -> str:
    taken = {t.name.casefold() for t in space.topics if t.topic_id != skip_id}
    candidate = name
    suffix = 2
    while candidate.casefold() in taken:
        candidate = f"{name} ({suffix})"
        suffix += 1
    if candidate != name:
        log.warning("topic name %r already taken; using %r", name, candidate)
    return candidate


def build_base_space(
    words: Sequence[str], k: int, seed: int, gateway: Gateway
) -> TopicSpace:
    """Embed all words, cluster them into k topics, and name each cluster."""
    if k <= 0:
        raise ValueError("k must be > 0")
    if len(words) < k:
        raise ValueError(f"need at least k={k} words, got {len(words)}")
    vectors = gateway.embed(list(words))
    dim = len(vectors[0])
    labels = kmeans(np.array(vectors), k=k, seed=seed)

    clusters: dict[int, list[int]] = {}
    for index, label in enumerate(labels):
        clusters.setdefault(int(label), []).append(index)
    # Stable topic order: clusters sorted by their lexicographically smallest
    # member word.
    ordered = sorted(clusters.values(), key=lambda idx: min(words[i] for i in idx))

    space = TopicSpace(version=1, topics=[], embedding_dim=dim, k=k, seed=seed)
    for member_indices in ordered:
        member_words = sorted(words[i] for i in member_indices)
        name, description = _name_topic(member_words, gateway)
        topic = Topic(
            topic_id=space.next_topic_id(),
            name=_unique_name(name, space),
            description=description,
            member_words=[(words[i], vectors[i]) for i in sorted(member_indices)],
            centroid=(0.0,) * dim,
            stage_added=1,
        )
        topic.recompute_centroid()
        space.topics.append(topic)
    return space


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(va.dot(vb)) / denom


def assign_or_create(word: str, space: TopicSpace, gateway: Gateway) -> tuple[str, bool]:
    """Assign a word to the most similar topic, or create a new one.

    The word joins the best topic when its centroid similarity is at least
    the smallest member-to-centroid similarity of that topic (weak
    inequality, so an exact duplicate of a member is always absorbed).
    Ties on similarity go to the lowest topic id.
    """
    if not word:
        raise ValueError("word must be non-empty")
    if not space.topics:
        raise ValueError("topic space has no topics")
    vector = gateway.embed([word])[0]
    if len(vector) != space.embedding_dim:
        raise TopicSpaceError(
            f"embedding dimension {len(vector)} != space dimension {space.embedding_dim}"
        )
    best = min(
        space.topics,
        key=lambda t: (-_cosine(vector, t.centroid), t.topic_id),
    )
    similarity = _cosine(vector, best.centroid)
    weakest = min(_cosine(v, best.centroid) for _, v in best.member_words)
    if similarity >= weakest:
        best.member_words.append((word, vector))
        best.recompute_centroid()
        return best.topic_id, False
    name, description = _name_topic([word], gateway)
    topic = Topic(
        topic_id=space.next_topic_id(),
        name=_unique_name(name, space),
        description=description,
        member_words=[(word, vector)],
        centroid=vector,
        stage_added=space.version,
    )
    space.topics.append(topic)
    return topic.topic_id, True


def advance_stage(
    space: TopicSpace, new_summary_reports: Sequence[Report], gateway: Gateway
) -> TopicSpace:
    """Produce the next stage of the topic space from new summary reports.

    Words already in the space are skipped; genuinely new words are processed
    in sorted order for reproducibility (incremental assignment is
    order-dependent). The input space is left untouched.
    """
    extracted = extract_topic_words(new_summary_reports, gateway)
    known = space.member_word_set()
    new_words = sorted({w for w in extracted if w.casefold() not in known})

    staged = copy.deepcopy(space)
    staged.version = space.version + 1
    for word in new_words:
        assign_or_create(word, staged, gateway)
    return staged


def revise_topic(
    space: TopicSpace,
    topic_id: str,
    name: str | None = None,
    description: str | None = None,
) -> TopicSpace:
    """Apply a human revision to one topic; membership is unchanged."""
    revised = copy.deepcopy(space)
    topic = revised.get(topic_id)
    if topic is None:
        raise TopicSpaceError(f"unknown topic id: {topic_id!r}")
    if name is not None:
        collision = revised.find_by_name(name)
        if collision is not None and collision.topic_id != topic_id:
            raise TopicSpaceError(f"topic name {name!r} collides with {collision.topic_id}")
        topic.name = name
    if description is not None:
        topic.description = description
    topic.human_revised = True
    topic.revision += 1
    return revised
