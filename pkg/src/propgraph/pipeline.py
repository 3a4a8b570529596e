"""Two-stage online retrieval.

Stage 1 ranks propositions against the query, seeds PPR on their entities
with high damping over the whole graph, and keeps the top passages as a
subgraph. Stage 2 runs beam search in that subgraph, turns the paths into
entity scores, and ranks passages with a low-damping PPR whose reset vector
mixes query-similar entities, path-derived entities and direct passage
similarity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .beam import SYNONYMOUS, BeamConfig, ReasoningPath, format_path, initial_ranking, run_beam_search
from .embedding import EmbeddingProvider, cosine
from .errors import ConfigError, EmptyInputError, PathGraphMismatchError, SeedError
from .graph import PropositionGraph, Subgraph, induce_subgraph
from .ppr import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, SeedDistribution, run_ppr, top_passages

logger = logging.getLogger(__name__)

SEED_MODES = ("both", "exploration_only", "exploitation_only")


@dataclass(frozen=True)
class PipelineConfig:
    n_prop: int = 20
    n_entity: int = 40
    k_subgraph: int = 50
    damping_stage1: float = 0.75
    damping_stage2: float = 0.45
    b_initial: int = 5
    p_initial: Optional[int] = None  # None: follow beam.beam_width
    b_beam: int = 5
    p_beam: int = 5
    lambda_passage: float = 0.05
    seed_mode: str = "both"
    k_out: int = 5
    ppr_tolerance: float = DEFAULT_TOLERANCE
    ppr_max_iterations: int = DEFAULT_MAX_ITERATIONS
    beam: BeamConfig = field(default_factory=BeamConfig)

    def __post_init__(self) -> None:
        counts = (self.n_prop, self.n_entity, self.k_subgraph, self.b_initial, self.b_beam, self.p_beam, self.k_out)
        if min(counts) < 1 or (self.p_initial is not None and self.p_initial < 1):
            raise ConfigError("all counts must be >= 1")
        for d in (self.damping_stage1, self.damping_stage2):
            if not 0.0 < d < 1.0:
                raise ConfigError("damping factors must lie in (0, 1)")
        if not 0.0 <= self.lambda_passage <= 1.0:
            raise ConfigError("lambda_passage must lie in [0, 1]")
        if self.seed_mode not in SEED_MODES:
            raise ConfigError(f"seed_mode must be one of {SEED_MODES}")

    @property
    def effective_p_initial(self) -> int:
        return self.p_initial if self.p_initial is not None else self.beam.beam_width

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        beam_kw = {k[5:]: kwargs.pop(k) for k in list(kwargs) if k.startswith("beam.")}
        cfg = replace(self, **kwargs)
        return replace(cfg, beam=replace(cfg.beam, **beam_kw)) if beam_kw else cfg


@dataclass
class Stage1Result:
    query_embedding: np.ndarray
    top_propositions: list[tuple[str, float]]
    initial_seeds: list[str]
    top_passages: list[tuple[str, float]]
    ppr_iterations: int
    ppr_converged: bool


@dataclass
class EntityScoreMap:
    scores: dict[str, float]
    membership: dict[str, float]
    boosts: dict[str, float]

    def ranked(self, restrict: Optional[set] = None) -> list[tuple[str, float]]:
        items = [(e, s) for e, s in self.scores.items() if restrict is None or e in restrict]
        return sorted(items, key=lambda t: (-t[1], t[0]))


@dataclass
class RankedResult:
    passages: list[tuple[str, float]]
    paths: list[ReasoningPath]
    diagnostics: dict = field(default_factory=dict)

    @property
    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.passages]

    def to_dict(self, view=None) -> dict:
        out = {
            "passages": [{"id": pid, "score": score} for pid, score in self.passages],
            "paths": [
                {
                    "propositions": list(p.propositions),
                    "connections": [
                        {"kind": c.kind, "entities": list(c.entities) if c.entities else None} for c in p.connections
                    ],
                    "score": p.score,
                }
                for p in self.paths
            ],
            "diagnostics": self.diagnostics,
        }
        if view is not None:
            out["explanations"] = [format_path(view, p) for p in self.paths]
        return out


def stage1(
    graph: PropositionGraph,
    query: str,
    config: PipelineConfig,
    provider: EmbeddingProvider,
    query_embedding: Optional[np.ndarray] = None,
) -> tuple[Subgraph, Stage1Result]:
    """Coarse filtering: proposition retrieval, uniform entity seeds, exploratory PPR, subgraph."""
    if query_embedding is None:
        if not query or not query.strip():
            raise EmptyInputError("query is empty")
        query_embedding = provider.embed(query, role="query")
    top_props = initial_ranking(graph, query_embedding)[: config.n_prop]
    seeds: list[str] = []
    for pid, _ in top_props:
        for eid in graph.propositions[pid].entity_ids:
            if eid not in seeds and len(seeds) < config.n_entity:
                seeds.append(eid)
    ppr = run_ppr(
        graph,
        SeedDistribution.uniform(seeds),
        config.damping_stage1,
        config.ppr_tolerance,
        config.ppr_max_iterations,
    )
    top = top_passages(ppr, graph, config.k_subgraph)
    sub = induce_subgraph(graph, [pid for pid, _ in top])
    return sub, Stage1Result(query_embedding, top_props, seeds, top, ppr.iterations, ppr.converged)


def entity_scores_from_paths(paths: Sequence[ReasoningPath], view) -> EntityScoreMap:
    """Path-derived entity relevance.

    Each proposition inherits its path's score and passes it to every entity
    it contains, so an entity in two propositions of one path gets it twice.
    A synonymous connection adds the path score once more to the entity on the
    receiving side. Negative path scores count as zero.
    """
    scores: dict[str, float] = {}
    membership: dict[str, float] = {}
    boosts: dict[str, float] = {}
    for path in paths:
        s = max(path.score, 0.0)
        for pid in path.propositions:
            if pid not in view.propositions:
                raise PathGraphMismatchError(f"proposition {pid!r} is not in the graph view")
            for eid in view.propositions[pid].entity_ids:
                membership[eid] = membership.get(eid, 0.0) + s
                scores[eid] = scores.get(eid, 0.0) + s
        for (a, b), conn in zip(zip(path.propositions, path.propositions[1:]), path.connections):
            if conn.kind != SYNONYMOUS:
                continue
            ea, eb = conn.entities
            if ea not in view.propositions[a].entity_ids or eb not in view.propositions[b].entity_ids:
                raise PathGraphMismatchError(f"connection {ea}~{eb} does not match {a}->{b}")
            boosts[eb] = boosts.get(eb, 0.0) + s
            scores[eb] = scores.get(eb, 0.0) + s
    return EntityScoreMap(scores, membership, boosts)


def _normalized(weights: dict[str, float]) -> dict[str, float]:
    """Clip to >= 0 and normalize; fall back to uniform when nothing is positive."""
    if not weights:
        return {}
    clipped = {k: max(v, 0.0) for k, v in weights.items()}
    total = sum(clipped.values())
    if total <= 0:
        return {k: 1.0 / len(clipped) for k in clipped}
    return {k: v / total for k, v in clipped.items()}


def build_final_seeds(
    view,
    query_embedding: np.ndarray,
    stage1_top_props: Sequence[tuple[str, float]],
    paths: Sequence[ReasoningPath],
    entity_scores: Optional[EntityScoreMap],
    passage_similarities: dict[str, float],
    config: PipelineConfig,
) -> tuple[SeedDistribution, dict]:
    """Reset vector for the exploitative PPR, plus a record of how it was assembled.

    Exploration seeds are the ``b_initial`` entities of the top
    ``effective_p_initial`` stage-1 propositions (those inside ``view``)
    closest to the query, weighted by that cosine. Exploitation seeds are the
    ``b_beam`` entities of the top ``p_beam`` paths with the highest
    path-derived score, weighted by it. Each group is normalized, the groups
    are averaged, and passages then receive ``lambda_passage`` of the mass in
    proportion to their query similarity.
    """
    groups: list[dict[str, float]] = []
    diag: dict = {"exploration": {}, "exploitation": {}, "entity_scores_consulted": False}

    if config.seed_mode in ("both", "exploration_only"):
        props = [pid for pid, _ in stage1_top_props if pid in view.propositions][: config.effective_p_initial]
        cands: list[str] = []
        for pid in props:
            for eid in view.propositions[pid].entity_ids:
                if eid not in cands:
                    cands.append(eid)
        sims = {e: cosine(view.entities[e].embedding, query_embedding) for e in cands}
        chosen = sorted(sims.items(), key=lambda t: (-t[1], t[0]))[: config.b_initial]
        group = _normalized(dict(chosen))
        diag["exploration"] = group
        if group:
            groups.append(group)

    if config.seed_mode in ("both", "exploitation_only"):
        if entity_scores is None:
            raise ValueError("entity scores are required unless seed_mode is exploration_only")
        diag["entity_scores_consulted"] = True
        path_entities = {
            eid for path in list(paths)[: config.p_beam] for pid in path.propositions for eid in view.propositions[pid].entity_ids
        }
        chosen = entity_scores.ranked(restrict=path_entities)[: config.b_beam]
        group = _normalized(dict(chosen))
        diag["exploitation"] = group
        if group:
            groups.append(group)

    entity_mass: dict[str, float] = {}
    for group in groups:
        for eid, w in group.items():
            entity_mass[eid] = entity_mass.get(eid, 0.0) + w / len(groups)

    passage_mass: dict[str, float] = {}
    if config.lambda_passage > 0 and any(v > 0 for v in passage_similarities.values()):
        passage_mass = _normalized(passage_similarities)
    if not entity_mass and not passage_mass:
        raise SeedError("no seeds: every seed group is empty")

    lam = config.lambda_passage if (entity_mass and passage_mass) else (1.0 if passage_mass else 0.0)
    weights = {e: w * (1.0 - lam) for e, w in entity_mass.items()}
    for pid, w in passage_mass.items():
        weights[pid] = weights.get(pid, 0.0) + w * lam
    diag["passage_weight"] = lam
    return SeedDistribution.from_weights(weights), diag


def stage2(
    subgraph: Subgraph,
    stage1_result: Stage1Result,
    config: PipelineConfig,
    provider: EmbeddingProvider,
    k_out: Optional[int] = None,
) -> RankedResult:
    """Beam search, path-derived seeds and exploitative PPR over the subgraph."""
    q = stage1_result.query_embedding
    k_out = k_out or config.k_out
    paths = run_beam_search(subgraph, q, config.beam, provider)
    scores = entity_scores_from_paths(paths, subgraph) if config.seed_mode != "exploration_only" else None
    passage_sims = {pid: cosine(subgraph.passages[pid].embedding, q) for pid in subgraph.passage_ids}
    seeds, seed_diag = build_final_seeds(
        subgraph, q, stage1_result.top_propositions, paths, scores, passage_sims, config
    )
    ppr = run_ppr(subgraph, seeds, config.damping_stage2, config.ppr_tolerance, config.ppr_max_iterations)
    ranked = top_passages(ppr, subgraph, k_out)
    diagnostics = {
        "stage1_top_propositions": [pid for pid, _ in stage1_result.top_propositions],
        "initial_seeds": list(stage1_result.initial_seeds),
        "subgraph": {
            "passages": len(subgraph.passage_ids),
            "entities": len(subgraph.entity_ids),
            "propositions": len(subgraph.proposition_ids),
        },
        "final_seeds": {k: v for k, v in sorted(seeds.entries.items())},
        "seed_groups": seed_diag,
        "ppr": {
            "stage1_iterations": stage1_result.ppr_iterations,
            "stage1_converged": stage1_result.ppr_converged,
            "stage2_iterations": ppr.iterations,
            "stage2_converged": ppr.converged,
        },
    }
    return RankedResult(ranked, paths, diagnostics)


def retrieve(
    graph: PropositionGraph,
    query: str,
    k_out: Optional[int],
    config: PipelineConfig,
    provider: EmbeddingProvider,
) -> tuple[RankedResult, Subgraph]:
    """Run both stages; returns the ranking and the subgraph it was drawn from."""
    if k_out is not None and k_out < 1:
        raise ValueError("k_out must be >= 1")
    sub, s1 = stage1(graph, query, config, provider)
    return stage2(sub, s1, config, provider, k_out), sub
