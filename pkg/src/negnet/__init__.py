"""negnet: codebook-driven LLM annotation of negotiation reports into a
longitudinal interaction-network dataset."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Entity,
    EntityKind,
    EntitySpace,
    Interaction,
    OutOfSpace,
    Provenance,
    RelationType,
    dedupe,
    normalize_entity,
)
