import socket
import time
from pathlib import Path

import pytest

from negnet.codebook import Codebook, Subtask, assemble_prompt, load_codebook
from negnet.corpus import Report, ingest_dir
from negnet.gateway import Gateway, GenerationConfig, ReplayBackend, ReplayStore

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_MODEL = "fixture-model"

# Wall-clock anchor for the offline-runtime acceptance check.
SUITE_T0 = time.monotonic()


@pytest.fixture(autouse=True, scope="session")
def _no_network():
    """The whole suite must run offline; any socket connect is a failure."""

    def guard(self, address):
        raise RuntimeError(f"network access attempted during tests: {address!r}")

    original = socket.socket.connect
    socket.socket.connect = guard
    yield
    socket.socket.connect = original


def fixture_generation_config() -> GenerationConfig:
    return GenerationConfig(model_id=FIXTURE_MODEL)


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_codebook() -> Codebook:
    return load_codebook(DATA_DIR / "codebook.txt")


@pytest.fixture(scope="session")
def fixture_reports() -> list[Report]:
    return ingest_dir(DATA_DIR / "corpus")


# Recorded model responses for the fixture corpus, keyed by the exact prompts
# the pipeline assembles. The expected interaction sets asserted in tests are
# hand-derived from these responses plus the closure rules.
PRESENCE_RESPONSES = {0: "Yes", 1: "Yes", 2: "No"}

RELATION_RESPONSES = {
    0: (
        '[{"Party1": "Saudi Arabia", "Party2": "The Philippines", "Relation": "Support"},'
        ' {"Party1": "Kuwait", "Party2": "The Philippines", "Relation": "Support"}]'
    ),
    1: (
        '[{"Party1": "Switzerland", "Party2": "EU", "Relation": "Agreement"},'
        ' {"Party1": "EU", "Party2": "Switzerland", "Relation": "Agreement"},'
        ' {"Party1": "AOSIS", "Party2": "Switzerland", "Relation": "Support"}]'
    ),
}

ATTRIBUTE_RESPONSES = {
    0: (
        '[{"Party1": "Kuwait", "Party2": "Philippines", "Relation": "Support",'
        ' "Topic": "Organizational Matters"},'
        ' {"Party1": "Saudi Arabia", "Party2": "Philippines", "Relation": "Support",'
        ' "Topic": "Organizational Matters"}]'
    ),
    1: (
        '[{"Party1": "Switzerland", "Party2": "EU", "Relation": "Agreement", "Topic": "Reporting"},'
        ' {"Party1": "EU", "Party2": "Switzerland", "Relation": "Agreement", "Topic": "Reporting"},'
        ' {"Party1": "AOSIS", "Party2": "Switzerland", "Relation": "Support", "Topic": "Reporting"}]'
    ),
}

# Triplets as extract_relations normalizes them, per paragraph.
FIXTURE_TRIPLETS = {
    0: [("Kuwait", "Philippines", "Support"), ("Saudi Arabia", "Philippines", "Support")],
    1: [
        ("AOSIS", "Switzerland", "Support"),
        ("EU", "Switzerland", "Agreement"),
        ("Switzerland", "EU", "Agreement"),
    ],
}


def build_annotation_replay(codebook: Codebook, reports: list[Report]) -> ReplayStore:
    """Record the responses above under the pipeline's exact prompts."""
    from negnet.model import RelationType

    store = ReplayStore()
    config = fixture_generation_config()
    daily = next(r for r in reports if r.report_id == "enb-1995-02-07")
    relation_examples = codebook.examples_for(Subtask.RELATION, ["ex-rel-1"])
    attribute_examples = codebook.examples_for(Subtask.ATTRIBUTE, ["ex-attr-1"])
    for paragraph in daily.paragraphs:
        presence = assemble_prompt(Subtask.PRESENCE, codebook, [], paragraph)
        store.add_completion(presence.rendered, config, PRESENCE_RESPONSES[paragraph.index])
        if paragraph.index in RELATION_RESPONSES:
            relation = assemble_prompt(Subtask.RELATION, codebook, relation_examples, paragraph)
            store.add_completion(relation.rendered, config, RELATION_RESPONSES[paragraph.index])
        if paragraph.index in ATTRIBUTE_RESPONSES:
            triplets = [
                (h, t, RelationType.parse(r)) for h, t, r in FIXTURE_TRIPLETS[paragraph.index]
            ]
            attribute = assemble_prompt(
                Subtask.ATTRIBUTE, codebook, attribute_examples, paragraph, context=triplets
            )
            store.add_completion(attribute.rendered, config, ATTRIBUTE_RESPONSES[paragraph.index])
    return store


def replay_gateway(store: ReplayStore, **kwargs) -> Gateway:
    return Gateway(ReplayBackend(store), fixture_generation_config(), **kwargs)


@pytest.fixture()
def annotation_replay(fixture_codebook, fixture_reports) -> ReplayStore:
    return build_annotation_replay(fixture_codebook, fixture_reports)
