"""Graph-guided beam search over proposition paths.

Paths grow one proposition at a time. Successors of a path's last proposition
are propositions sharing one of its entities (``exact``), propositions holding
a synonym of one of its entities (``synonymous``), and the top initial
propositions (``jump``), which need no link. Each round scores every
expansion cheaply with the mean of its proposition embeddings, re-scores the
best ``exact_pool`` by embedding the concatenated path text, and keeps the top
``beam_width``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import EmbeddingProvider, average_embedding, cosine
from .errors import ConfigError, EmptySubgraphError, ZeroVectorError

logger = logging.getLogger(__name__)

EXACT = "exact"
SYNONYMOUS = "synonymous"
JUMP = "jump"
UNLINKED = "unlinked"  # only produced with graph_guidance off

PRELIMINARY = "preliminary"
EXACT_TIER = "exact"

PATH_DELIMITER = " "


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 4
    max_length: int = 3
    exact_pool: int = 40
    jump_count: int = 3
    graph_guidance: bool = True

    def __post_init__(self) -> None:
        if self.beam_width < 1 or self.max_length < 1:
            raise ConfigError("beam_width and max_length must be >= 1")
        if self.exact_pool < self.beam_width:
            raise ConfigError("exact_pool must be >= beam_width")
        if self.jump_count < 0:
            raise ConfigError("jump_count must be >= 0")


@dataclass(frozen=True)
class Connection:
    """Link between consecutive propositions.

    ``entities`` is ``(entity in predecessor, entity in successor)``; both are
    the same id for an exact link and ``None`` for jump/unlinked steps.
    """

    kind: str
    entities: Optional[tuple[str, str]] = None


@dataclass(frozen=True)
class ReasoningPath:
    propositions: tuple[str, ...]
    connections: tuple[Connection, ...]
    score: float
    score_tier: str = EXACT_TIER

    def __len__(self) -> int:
        return len(self.propositions)


def path_rank_key(path: ReasoningPath):
    """Descending score, then shorter, then lexicographic id sequence."""
    return (-path.score, len(path.propositions), path.propositions)


def initial_ranking(view, query_embedding: np.ndarray) -> list[tuple[str, float]]:
    """All propositions of the view by descending cosine to the query, ties by id."""
    pids = list(view.proposition_ids)
    if not pids:
        raise EmptySubgraphError("graph view has no propositions")
    mat = view.proposition_matrix()
    q = np.asarray(query_embedding, dtype=np.float64)
    sims = (mat @ q) / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q))
    return sorted(zip(pids, sims.tolist()), key=lambda t: (-t[1], t[0]))


def initialize_beam(view, query_embedding: np.ndarray, config: BeamConfig) -> list[ReasoningPath]:
    """Singleton paths for the ``beam_width`` propositions closest to the query."""
    ranking = initial_ranking(view, query_embedding)
    return [ReasoningPath((pid,), (), score, EXACT_TIER) for pid, score in ranking[: config.beam_width]]


def link(view, src: str, dst: str) -> Optional[Connection]:
    """Strongest entity link from ``src`` to ``dst``: exact beats synonymous.

    Exact links pick the smallest shared entity id; synonymous links pick the
    most similar pair, ties by ids.
    """
    src_ents = view.propositions[src].entity_ids
    dst_ents = set(view.propositions[dst].entity_ids)
    shared = sorted(dst_ents.intersection(src_ents))
    if shared:
        return Connection(EXACT, (shared[0], shared[0]))
    best = None
    for a in sorted(src_ents):
        for b, sim in view.synonyms_of(a):
            if b in dst_ents:
                key = (-sim, a, b)
                if best is None or key < best[0]:
                    best = (key, a, b)
    if best is not None:
        return Connection(SYNONYMOUS, (best[1], best[2]))
    return None


def candidate_expansions(
    view, path: ReasoningPath, top_initial: Sequence[str], config: BeamConfig
) -> list[tuple[str, Connection]]:
    """Successor propositions for ``path`` with their connection, sorted by id."""
    in_path = set(path.propositions)
    last = path.propositions[-1]
    if config.graph_guidance:
        pool: set[str] = set()
        for eid in view.propositions[last].entity_ids:
            pool.update(view.propositions_of_entity(eid))
            for syn, _ in view.synonyms_of(eid):
                pool.update(view.propositions_of_entity(syn))
        pool.update(top_initial)
    else:
        pool = set(view.proposition_ids)
    jumpable = set(top_initial)
    out = []
    for pid in sorted(pool - in_path):
        conn = link(view, last, pid)
        if conn is None:
            conn = Connection(JUMP if pid in jumpable else UNLINKED)
        out.append((pid, conn))
    return out


def score_path_preliminary(path_embeddings: Sequence[np.ndarray], query_embedding: np.ndarray) -> float:
    """Cosine between the re-normalized mean proposition embedding and the query."""
    try:
        return cosine(average_embedding(path_embeddings), query_embedding)
    except ZeroVectorError:
        return 0.0


def path_text(texts: Sequence[str]) -> str:
    return PATH_DELIMITER.join(texts)


def score_path_exact(
    path_texts: Sequence[str],
    query_embedding: np.ndarray,
    provider: EmbeddingProvider,
    cache: Optional[dict] = None,
) -> float:
    """Cosine between the embedding of the space-joined path text and the query."""
    text = path_text(path_texts)
    if cache is not None and text in cache:
        return cache[text]
    score = cosine(provider.embed(text, role="document"), query_embedding)
    if cache is not None:
        cache[text] = score
    return score


class _ExactScorer:
    """Batches provider calls for a round and caches scores by path text."""

    def __init__(self, view, query_embedding: np.ndarray, provider: EmbeddingProvider):
        self.view = view
        self.q = np.asarray(query_embedding, dtype=np.float64)
        self.provider = provider
        self.cache: dict[str, float] = {}

    def score_many(self, seqs: Sequence[tuple[str, ...]]) -> list[float]:
        texts = [path_text([self.view.propositions[p].text for p in seq]) for seq in seqs]
        todo = sorted({t for t in texts if t not in self.cache})
        if todo:
            for t, vec in zip(todo, self.provider.embed_texts(todo, role="document")):
                self.cache[t] = cosine(vec, self.q)
        return [self.cache[t] for t in texts]


def run_beam_search(
    view,
    query_embedding: np.ndarray,
    config: BeamConfig,
    provider: EmbeddingProvider,
) -> list[ReasoningPath]:
    """Best ``beam_width`` paths of length <= ``max_length``, exact-tier scored.

    Singleton scores are the cosine of the stored proposition embedding.
    Paths that run out of successors before ``max_length`` stay eligible for
    the final ranking.
    """
    ranking = initial_ranking(view, query_embedding)
    q = np.asarray(query_embedding, dtype=np.float64)
    beam = [ReasoningPath((pid,), (), s, EXACT_TIER) for pid, s in ranking[: config.beam_width]]
    top_initial = [pid for pid, _ in ranking[: config.jump_count]]
    scorer = _ExactScorer(view, q, provider)
    emb = {pid: np.asarray(view.propositions[pid].embedding, dtype=np.float64) for pid in view.proposition_ids}
    finished: list[ReasoningPath] = []

    for depth in range(2, config.max_length + 1):
        expansions: list[tuple[tuple[str, ...], tuple[Connection, ...]]] = []
        for path in beam:
            cands = candidate_expansions(view, path, top_initial, config)
            if not cands:
                finished.append(path)
                continue
            for pid, conn in cands:
                expansions.append((path.propositions + (pid,), path.connections + (conn,)))
        if not expansions:
            logger.debug("no valid expansions at depth %d", depth)
            beam = []
            break

        prelim = [score_path_preliminary([emb[p] for p in seq], q) for seq, _ in expansions]
        order = sorted(range(len(expansions)), key=lambda i: (-prelim[i], expansions[i][0]))
        pool = [expansions[i] for i in order[: config.exact_pool]]
        exact = scorer.score_many([seq for seq, _ in pool])
        scored = [ReasoningPath(seq, conns, s, EXACT_TIER) for (seq, conns), s in zip(pool, exact)]
        scored.sort(key=path_rank_key)
        beam = scored[: config.beam_width]
        logger.debug("depth %d: %d expansions, %d rescored, best %.4f", depth, len(expansions), len(pool), beam[0].score)

    final = sorted(beam + finished, key=path_rank_key)
    return final[: config.beam_width]


def check_path(view, path: ReasoningPath, top_initial: Sequence[str]) -> None:
    """Raise ``ValueError`` if ``path`` breaks a structural invariant on ``view``."""
    if len(set(path.propositions)) != len(path.propositions):
        raise ValueError(f"repeated proposition in {path.propositions}")
    if len(path.connections) != len(path.propositions) - 1:
        raise ValueError("connection count does not match path length")
    if not np.isfinite(path.score):
        raise ValueError("path score is not finite")
    for (a, b), conn in zip(zip(path.propositions, path.propositions[1:]), path.connections):
        ea, eb = view.propositions[a].entity_ids, view.propositions[b].entity_ids
        if conn.kind == EXACT:
            x, y = conn.entities
            if x != y or x not in ea or x not in eb:
                raise ValueError(f"exact link {a}->{b} via {x} is not shared")
        elif conn.kind == SYNONYMOUS:
            x, y = conn.entities
            if x not in ea or y not in eb or y not in {s for s, _ in view.synonyms_of(x)}:
                raise ValueError(f"synonymous link {a}->{b} via {x}~{y} has no synonymy edge")
        elif conn.kind == JUMP:
            if b not in top_initial:
                raise ValueError(f"jump to {b} which is not a top initial proposition")
        elif conn.kind != UNLINKED:
            raise ValueError(f"unknown connection kind {conn.kind!r}")


def format_path(view, path: ReasoningPath) -> str:
    """One-line rendering: score, arrow-joined propositions, then the entity links used."""
    texts = [view.propositions[p].text for p in path.propositions]
    notes = []
    for conn in path.connections:
        if conn.kind == EXACT:
            notes.append(f'via entity link: "{view.entities[conn.entities[0]].surface}"')
        elif conn.kind == SYNONYMOUS:
            a, b = conn.entities
            notes.append(f'via entity link: "{view.entities[a].surface}" → "{view.entities[b].surface}"')
        else:
            notes.append(conn.kind)
    line = f"{path.score:.4f} - " + " → ".join(texts)
    return line + (f" ({'; '.join(notes)})" if notes else "")
