import numpy as np
import pytest

from propgraph.embedding import MockEmbeddingProvider, cosine
from propgraph.graph import SYNONYMY
from propgraph.indexing import build_index_graph
from propgraph.normalize import entity_id
from propgraph.synthetic import planted_chain


def test_instance_shape():
    inst = planted_chain(3)
    assert len(inst.passages) == 20
    assert len({p.id for p in inst.passages}) == 20
    assert len(inst.case.gold_passage_ids) == 3
    assert inst.bridge_id in inst.case.gold_passage_ids
    assert inst.synonym_bridge
    assert [r.passage_id for r in inst.records] == [p.id for p in inst.passages]


def test_generation_is_deterministic():
    a, b = planted_chain(7), planted_chain(7)
    assert a.passages == b.passages and a.records == b.records and a.case == b.case
    assert planted_chain(8).passages != a.passages


def test_bridge_has_low_direct_similarity():
    prov = MockEmbeddingProvider()
    for seed in range(5):
        inst = planted_chain(seed)
        q = prov.embed(inst.case.query, role="query")
        sims = {p.id: cosine(prov.embed(p.full_text), q) for p in inst.passages}
        ranked = sorted(sims, key=lambda pid: -sims[pid])
        assert ranked.index(inst.bridge_id) >= 5


def test_synonym_bridge_creates_synonymy_edge():
    prov = MockEmbeddingProvider()
    for seed in range(3):
        inst = planted_chain(seed)
        graph = build_index_graph(inst.passages, inst.records, prov)
        bridge_record = next(r for r in inst.records if r.passage_id == inst.bridge_id)
        alias = entity_id(next(e for e in bridge_record.entities if e.endswith(" Group")))
        maker = entity_id(alias[2:].removesuffix(" group"))
        (edge,) = [e for e in graph.edges if e.kind == SYNONYMY and alias in e.endpoints]
        assert set(edge.endpoints) == {alias, maker}
        assert edge.weight == pytest.approx(2 / 6**0.5, abs=1e-6)


def test_exact_bridge_variant():
    inst = planted_chain(2, synonym_bridge=False)
    assert not inst.synonym_bridge
    ents = [set(r.entities) for r in inst.records]
    bridge = next(e for r, e in zip(inst.records, ents) if r.passage_id == inst.bridge_id)
    others = set().union(*(e for r, e in zip(inst.records, ents) if r.passage_id != inst.bridge_id))
    assert len(bridge & others) == 2


def test_vocabulary_claims_distinct_buckets():
    inst = planted_chain(4)
    words = {w for r in inst.records for e in r.entities for w in e.split() if w != "Group"}
    prov = MockEmbeddingProvider()
    vecs = {w: prov.embed(w) for w in words}
    support = [int(np.flatnonzero(v)[0]) for v in vecs.values()]
    assert len(set(support)) == len(support)


def test_too_small_corpus_rejected():
    with pytest.raises(ValueError):
        planted_chain(0, n_passages=5)
