"""Proposition graph: entity and passage nodes joined by clique, containment and synonymy edges.

Propositions are not nodes. Each one contributes a clique over its entities
(an implicit hyper-edge) and is indexed from its entities for path search.
A built graph is immutable; :func:`induce_subgraph` returns a restricted read-only view.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import (
    DanglingReferenceError,
    DataError,
    DimensionMismatchError,
    EmptyCorpusError,
    UnknownNodeError,
)
from .normalize import entity_id, normalize_entity

CLIQUE = "clique"
CONTAINMENT = "containment"
SYNONYMY = "synonymy"
EDGE_KINDS = (CLIQUE, CONTAINMENT, SYNONYMY)
_KIND_ORDER = {k: i for i, k in enumerate(EDGE_KINDS)}

DEFAULT_TAU_SYN = 0.8


def _frozen_vector(vec, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DataError("embedding has non-finite components")
    norm = np.linalg.norm(arr)
    if norm == 0:
        raise DataError("embedding is the zero vector")
    out = (arr / norm).astype(np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PassageInput:
    id: str
    text: str
    embedding: np.ndarray


@dataclass(frozen=True)
class PropositionInput:
    """A proposition before entity keying; ``entities`` holds surface strings."""

    id: str
    text: str
    passage_id: str
    entities: tuple[str, ...]
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class EntityNode:
    id: str
    surface: str
    embedding: np.ndarray
    source_passages: frozenset[str]


@dataclass(frozen=True, eq=False)
class PassageNode:
    id: str
    text: str
    embedding: np.ndarray
    proposition_ids: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class Proposition:
    id: str
    text: str
    entity_ids: tuple[str, ...]
    passage_id: str
    embedding: np.ndarray


@dataclass(frozen=True)
class Edge:
    """Undirected edge; ``endpoints`` is stored sorted.

    ``provenance`` is the tuple of proposition ids for a clique edge (its
    length is the multiplicity and the weight), the passage id for a
    containment edge, and the cosine similarity for a synonymy edge.
    """

    kind: str
    endpoints: tuple[str, str]
    weight: float
    provenance: Union[tuple[str, ...], str, float]


Neighbor = tuple[str, str, float]


class _View:
    """Read-only operations shared by the full graph and subgraphs."""

    node_ids: tuple[str, ...]
    entity_ids: tuple[str, ...]
    passage_ids: tuple[str, ...]
    proposition_ids: tuple[str, ...]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_index

    def is_passage(self, node_id: str) -> bool:
        return node_id in self._passage_set

    def is_entity(self, node_id: str) -> bool:
        return node_id in self._entity_set

    def node_index(self, node_id: str) -> int:
        try:
            return self._node_index[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node: {node_id!r}") from None

    def neighbors(self, node_id: str, kinds: Optional[Iterable[str]] = None) -> list[Neighbor]:
        """Neighbors as ``(id, kind, weight)`` sorted by id then kind."""
        if node_id not in self._node_index:
            raise UnknownNodeError(f"unknown node: {node_id!r}")
        wanted = set(kinds) if kinds is not None else None
        return [n for n in self._adjacency.get(node_id, ()) if wanted is None or n[1] in wanted]

    def propositions_of_entity(self, eid: str) -> tuple[str, ...]:
        return self._entity_props.get(eid, ())

    def synonyms_of(self, eid: str) -> tuple[tuple[str, float], ...]:
        return self._synonyms.get(eid, ())

    def proposition_matrix(self) -> Optional[np.ndarray]:
        """Proposition embeddings (float64) in ``proposition_ids`` order."""
        return self._prop_matrix

    def weight_matrix(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency over ``node_ids`` (weights summed across kinds)."""
        return self._weights


class PropositionGraph(_View):
    """Immutable proposition graph. Build with :func:`build_graph`."""

    def __init__(
        self,
        entities: Sequence[EntityNode],
        passages: Sequence[PassageNode],
        propositions: Sequence[Proposition],
        edges: Sequence[Edge],
        tau_syn: float,
    ):
        ents = sorted(entities, key=lambda e: e.id)
        self.tau_syn = float(tau_syn)
        self.entities: Mapping[str, EntityNode] = MappingProxyType({e.id: e for e in ents})
        self.passages: Mapping[str, PassageNode] = MappingProxyType({p.id: p for p in passages})
        self.propositions: Mapping[str, Proposition] = MappingProxyType({p.id: p for p in propositions})
        self.edges: tuple[Edge, ...] = tuple(sorted(edges, key=lambda e: (_KIND_ORDER[e.kind], e.endpoints)))
        self.entity_ids = tuple(e.id for e in ents)
        self.passage_ids = tuple(p.id for p in passages)
        self.proposition_ids = tuple(p.id for p in propositions)
        self.node_ids = self.entity_ids + self.passage_ids
        self.dimension = int(next(iter(self.passages.values())).embedding.shape[0]) if passages else 0
        self._entity_set = frozenset(self.entity_ids)
        self._passage_set = frozenset(self.passage_ids)
        self._node_index = MappingProxyType({nid: i for i, nid in enumerate(self.node_ids)})

        adj: dict[str, list[Neighbor]] = {}
        syn: dict[str, list[tuple[str, float]]] = {}
        rows, cols, vals = [], [], []
        for e in self.edges:
            a, b = e.endpoints
            adj.setdefault(a, []).append((b, e.kind, e.weight))
            adj.setdefault(b, []).append((a, e.kind, e.weight))
            ia, ib = self._node_index[a], self._node_index[b]
            rows += [ia, ib]
            cols += [ib, ia]
            vals += [e.weight, e.weight]
            if e.kind == SYNONYMY:
                syn.setdefault(a, []).append((b, float(e.provenance)))
                syn.setdefault(b, []).append((a, float(e.provenance)))
        self._adjacency = MappingProxyType(
            {k: tuple(sorted(v, key=lambda n: (n[0], _KIND_ORDER[n[1]]))) for k, v in adj.items()}
        )
        self._synonyms = MappingProxyType({k: tuple(sorted(v)) for k, v in syn.items()})
        n = len(self.node_ids)
        w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64).tocsr()
        w.sum_duplicates()
        self._weights = w

        eprops: dict[str, list[str]] = {}
        for p in propositions:
            for eid in p.entity_ids:
                eprops.setdefault(eid, []).append(p.id)
        self._entity_props = MappingProxyType({k: tuple(v) for k, v in eprops.items()})

        self._prop_rows = MappingProxyType({p.id: i for i, p in enumerate(propositions)})
        self._prop_matrix = np.stack([p.embedding for p in propositions]).astype(np.float64) if propositions else None
        self._frozen = True

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError("PropositionGraph is immutable")
        super().__setattr__(name, value)

    @property
    def graph(self) -> "PropositionGraph":
        return self

    def proposition_row(self, pid: str) -> int:
        return self._prop_rows[pid]

    def edge_counts(self) -> dict[str, int]:
        counts = {k: 0 for k in EDGE_KINDS}
        for e in self.edges:
            counts[e.kind] += 1
        return counts


class Subgraph(_View):
    """Restriction of a graph to the closure of a set of passages."""

    def __init__(self, graph: PropositionGraph, top_passage_ids: Sequence[str]):
        ranked: list[str] = []
        for pid in top_passage_ids:
            if pid not in graph.passages:
                raise UnknownNodeError(f"unknown passage: {pid!r}")
            if pid not in ranked:
                ranked.append(pid)
        self.graph = graph
        self.ranked_passage_ids = tuple(ranked)
        keep_passages = set(ranked)
        props = [pid for pid in graph.proposition_ids if graph.propositions[pid].passage_id in keep_passages]
        ents: set[str] = set()
        for pid in props:
            ents.update(graph.propositions[pid].entity_ids)
        self.proposition_ids = tuple(props)
        self.entity_ids = tuple(e for e in graph.entity_ids if e in ents)
        self.passage_ids = tuple(p for p in graph.passage_ids if p in keep_passages)
        self.node_ids = self.entity_ids + self.passage_ids
        self._entity_set = frozenset(self.entity_ids)
        self._passage_set = frozenset(self.passage_ids)
        self._node_index = MappingProxyType({nid: i for i, nid in enumerate(self.node_ids)})
        retained = self._entity_set | self._passage_set
        self._retained_props = frozenset(props)

        self._adjacency = MappingProxyType(
            {
                nid: tuple(n for n in graph._adjacency.get(nid, ()) if n[0] in retained)
                for nid in self.node_ids
            }
        )
        self._synonyms = MappingProxyType(
            {e: tuple(s for s in graph.synonyms_of(e) if s[0] in self._entity_set) for e in self.entity_ids}
        )
        self._entity_props = MappingProxyType(
            {
                e: tuple(p for p in graph.propositions_of_entity(e) if p in self._retained_props)
                for e in self.entity_ids
            }
        )
        idx = np.array([graph.node_index(n) for n in self.node_ids], dtype=np.int64)
        self._weights = graph.weight_matrix()[idx][:, idx].tocsr()
        self.propositions = MappingProxyType({p: graph.propositions[p] for p in props})
        rows = np.array([graph.proposition_row(p) for p in props], dtype=np.int64)
        self._prop_matrix = graph.proposition_matrix()[rows] if props else None
        self.passages = MappingProxyType({p: graph.passages[p] for p in self.passage_ids})
        self.entities = MappingProxyType({e: graph.entities[e] for e in self.entity_ids})
        self.dimension = graph.dimension


GraphView = Union[PropositionGraph, Subgraph]


def neighbors(view: GraphView, node_id: str, kinds: Optional[Iterable[str]] = None) -> list[Neighbor]:
    return view.neighbors(node_id, kinds)


def induce_subgraph(graph: PropositionGraph, top_passage_ids: Sequence[str]) -> Subgraph:
    """Keep the given passages, the propositions they own and those propositions' entities."""
    return Subgraph(graph, top_passage_ids)


def detect_synonyms(entities: Sequence, tau_syn: float, block: int = 1024) -> list[tuple[tuple[str, str], float]]:
    """All ordered pairs of distinct entities with cosine >= ``tau_syn``.

    ``entities`` are objects with ``id`` and unit-norm ``embedding``. Both
    orientations of each pair are returned, sorted by pair. Work is done in
    row blocks so memory stays O(block * n).
    """
    if not 0.0 < tau_syn <= 1.0:
        raise ValueError("tau_syn must lie in (0, 1]")
    if len(entities) < 2:
        return []
    ids = [e.id for e in entities]
    mat = np.stack([np.asarray(e.embedding, dtype=np.float64) for e in entities])
    out: list[tuple[tuple[str, str], float]] = []
    for start in range(0, len(ids), block):
        sims = mat[start : start + block] @ mat.T
        rows, cols = np.nonzero(sims >= tau_syn)
        for r, c in zip(rows.tolist(), cols.tolist()):
            i = start + r
            if i != c:
                out.append(((ids[i], ids[c]), float(sims[r, c])))
    out.sort(key=lambda x: x[0])
    return out


def build_graph(
    propositions: Sequence[PropositionInput],
    passages: Sequence[PassageInput],
    entity_embeddings: Mapping[str, np.ndarray],
    tau_syn: float = DEFAULT_TAU_SYN,
) -> PropositionGraph:
    """Build the frozen graph.

    Entity surfaces in ``propositions`` are keyed with :func:`entity_id`;
    ``entity_embeddings`` must hold a vector for every resulting id. Embeddings
    are re-normalized and stored as float32.
    """
    if not 0.0 < tau_syn <= 1.0:
        raise ValueError("tau_syn must lie in (0, 1]")
    if not passages:
        raise EmptyCorpusError("corpus has no passages")
    if not propositions:
        raise EmptyCorpusError("corpus has no propositions")

    dim = int(np.asarray(passages[0].embedding).reshape(-1).shape[0])
    passage_texts: dict[str, str] = {}
    passage_vecs: dict[str, np.ndarray] = {}
    for p in passages:
        if p.id in passage_texts:
            raise DataError(f"duplicate passage id: {p.id!r}")
        if not p.text.strip():
            raise DataError(f"passage {p.id!r} has empty text")
        passage_texts[p.id] = p.text
        passage_vecs[p.id] = _frozen_vector(p.embedding, dim)

    surfaces: dict[str, str] = {}
    sources: dict[str, set[str]] = {}
    props: list[Proposition] = []
    passage_props: dict[str, list[str]] = {pid: [] for pid in passage_texts}
    seen_props: set[str] = set()
    for p in propositions:
        if p.id in seen_props:
            raise DataError(f"duplicate proposition id: {p.id!r}")
        seen_props.add(p.id)
        if p.passage_id not in passage_texts:
            raise DanglingReferenceError("passage", p.passage_id)
        if not p.text.strip():
            raise DataError(f"proposition {p.id!r} has empty text")
        eids: list[str] = []
        for surface in p.entities:
            if not normalize_entity(surface):
                continue
            eid = entity_id(surface)
            if eid not in eids:
                eids.append(eid)
            surfaces.setdefault(eid, surface.strip())
            sources.setdefault(eid, set()).add(p.passage_id)
        if not eids:
            raise DataError(f"proposition {p.id!r} has no entities")
        props.append(Proposition(p.id, p.text, tuple(eids), p.passage_id, _frozen_vector(p.embedding, dim)))
        passage_props[p.passage_id].append(p.id)

    clash = set(surfaces) & set(passage_texts)
    if clash:
        raise DataError(f"passage ids collide with entity ids: {sorted(clash)}")

    entities = []
    for eid in sorted(surfaces):
        if eid not in entity_embeddings:
            raise DanglingReferenceError("entity embedding", eid)
        entities.append(
            EntityNode(eid, surfaces[eid], _frozen_vector(entity_embeddings[eid], dim), frozenset(sources[eid]))
        )

    passage_nodes = [
        PassageNode(pid, passage_texts[pid], passage_vecs[pid], tuple(passage_props[pid])) for pid in passage_texts
    ]

    clique: dict[tuple[str, str], list[str]] = {}
    for prop in props:
        for a, b in itertools.combinations(sorted(prop.entity_ids), 2):
            clique.setdefault((a, b), []).append(prop.id)
    edges = [Edge(CLIQUE, pair, float(len(pids)), tuple(pids)) for pair, pids in clique.items()]
    for eid in sorted(sources):
        for pid in sorted(sources[eid]):
            edges.append(Edge(CONTAINMENT, tuple(sorted((eid, pid))), 1.0, pid))
    for (a, b), sim in detect_synonyms(entities, tau_syn):
        if a < b:
            edges.append(Edge(SYNONYMY, (a, b), sim, sim))

    return PropositionGraph(entities, passage_nodes, props, edges, tau_syn)
