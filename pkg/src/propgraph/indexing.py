"""Offline indexing: extraction records plus embeddings into a proposition graph."""

from __future__ import annotations

import logging
from typing import Sequence

from .embedding import EmbeddingProvider
from .errors import DanglingReferenceError
from .extraction import CorpusPassage, ExtractionRecord
from .graph import DEFAULT_TAU_SYN, PassageInput, PropositionGraph, PropositionInput, build_graph
from .normalize import entity_id

logger = logging.getLogger(__name__)


def proposition_id(passage_id: str, index: int) -> str:
    return f"{passage_id}#p{index}"


def build_index_graph(
    passages: Sequence[CorpusPassage],
    records: Sequence[ExtractionRecord],
    provider: EmbeddingProvider,
    tau_syn: float = DEFAULT_TAU_SYN,
) -> PropositionGraph:
    """Embed passages, propositions and entity surfaces, then build the graph.

    Passages without a record are kept as isolated nodes. Each entity is
    embedded from the first surface form seen in record order.
    """
    by_id = {p.id: p for p in passages}
    for rec in records:
        if rec.passage_id not in by_id:
            raise DanglingReferenceError("passage", rec.passage_id)

    passage_vecs = provider.embed_texts([p.full_text for p in passages], role="document")
    passage_inputs = [PassageInput(p.id, p.full_text, v) for p, v in zip(passages, passage_vecs)]

    prop_specs = []
    surfaces: dict[str, str] = {}
    for rec in records:
        for i, prop in enumerate(rec.propositions):
            prop_specs.append((proposition_id(rec.passage_id, i), prop.text, rec.passage_id, tuple(prop.entities)))
            for surface in prop.entities:
                surfaces.setdefault(entity_id(surface), surface.strip())

    prop_vecs = provider.embed_texts([text for _, text, _, _ in prop_specs], role="document") if prop_specs else []
    prop_inputs = [PropositionInput(pid, text, passage, ents, v) for (pid, text, passage, ents), v in zip(prop_specs, prop_vecs)]

    eids = sorted(surfaces)
    ent_vecs = provider.embed_texts([surfaces[e] for e in eids], role="document") if eids else []
    logger.info("embedded %d passages, %d propositions, %d entities", len(passages), len(prop_inputs), len(eids))
    return build_graph(prop_inputs, passage_inputs, dict(zip(eids, ent_vecs)), tau_syn)
