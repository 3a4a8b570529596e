"""Multi-hop passage retrieval over a graph of propositions and entities.

Offline, passages are decomposed into propositions whose entities become graph
nodes. Online, a beam search finds chains of linked propositions and the
entities on those chains seed a personalized PageRank that ranks passages.
"""

from .beam import BeamConfig, ReasoningPath, run_beam_search
from .embedding import MockEmbeddingProvider, ProviderConfig, RemoteEmbeddingProvider, cosine
from .evaluation import QueryCase, answer_f1, recall_at_k, run_eval
from .graph import PropositionGraph, Subgraph, build_graph, induce_subgraph
from .indexing import build_index_graph
from .pipeline import PipelineConfig, RankedResult, entity_scores_from_paths, retrieve
from .ppr import SeedDistribution, run_ppr
from .storage import load_index, save_index

__version__ = "0.1.0"

__all__ = [
    "BeamConfig",
    "MockEmbeddingProvider",
    "PipelineConfig",
    "PropositionGraph",
    "ProviderConfig",
    "QueryCase",
    "RankedResult",
    "ReasoningPath",
    "RemoteEmbeddingProvider",
    "SeedDistribution",
    "Subgraph",
    "answer_f1",
    "build_graph",
    "build_index_graph",
    "cosine",
    "entity_scores_from_paths",
    "induce_subgraph",
    "load_index",
    "recall_at_k",
    "retrieve",
    "run_beam_search",
    "run_eval",
    "run_ppr",
    "save_index",
]
