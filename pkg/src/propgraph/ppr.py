"""Personalized PageRank over a graph view.

``damping`` is the probability of following an edge; ``1 - damping`` is the
restart probability. High damping spreads mass further from the seeds. Mass
sitting on nodes without edges is returned to the seed distribution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import SeedError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 200


@dataclass(frozen=True)
class SeedDistribution:
    """Reset distribution; build with :meth:`from_weights` to normalize."""

    entries: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.entries:
            raise SeedError("seed distribution is empty")
        if any(w < 0 or not np.isfinite(w) for w in self.entries.values()):
            raise SeedError("seed weights must be finite and non-negative")
        total = sum(self.entries.values())
        if abs(total - 1.0) > 1e-9:
            raise SeedError(f"seed weights sum to {total}, not 1")

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "SeedDistribution":
        if any(v < 0 for v in weights.values()):
            raise SeedError("seed weights must be non-negative")
        positive = {k: float(v) for k, v in weights.items() if v > 0}
        total = sum(positive.values())
        if total <= 0:
            raise SeedError("seed distribution needs at least one positive weight")
        return cls({k: v / total for k, v in sorted(positive.items())})

    @classmethod
    def uniform(cls, node_ids) -> "SeedDistribution":
        ids = list(dict.fromkeys(node_ids))
        return cls.from_weights({n: 1.0 for n in ids})


@dataclass(frozen=True)
class PPRScores:
    scores: Mapping[str, float]
    iterations: int
    converged: bool
    residual: float = field(default=0.0)

    def __getitem__(self, node_id: str) -> float:
        return self.scores[node_id]


def transition_matrix(weights: sp.spmatrix) -> tuple[sp.csr_matrix, np.ndarray]:
    """Row-normalized transition matrix and the boolean mask of dangling rows."""
    w = sp.csr_matrix(weights, dtype=np.float64)
    out_weight = np.asarray(w.sum(axis=1)).ravel()
    dangling = out_weight <= 0
    inv = np.zeros_like(out_weight)
    inv[~dangling] = 1.0 / out_weight[~dangling]
    return sp.diags(inv) @ w, dangling


def run_ppr(
    view,
    seeds: SeedDistribution,
    damping: float,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PPRScores:
    """Iterate ``x <- (1-d) s + d (P^T x + dangling(x) s)`` from ``x = s``.

    Stops when the L1 change drops below ``tolerance``; hitting
    ``max_iterations`` first yields ``converged=False`` rather than an error.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    node_ids = view.node_ids
    s = np.zeros(len(node_ids), dtype=np.float64)
    for nid, w in seeds.entries.items():
        if not view.has_node(nid):
            raise SeedError(f"seed {nid!r} is not in the graph view")
        s[view.node_index(nid)] = w

    trans, dangling = transition_matrix(view.weight_matrix())
    trans_t = trans.T.tocsr()
    x = s.copy()
    residual = float("inf")
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        x_new = damping * (trans_t @ x + x[dangling].sum() * s) + (1.0 - damping) * s
        residual = float(np.abs(x_new - x).sum())
        x = x_new
        if residual < tolerance:
            converged = True
            break
    if not converged:
        logger.warning("PPR did not converge in %d iterations (residual %.3g)", max_iterations, residual)
    return PPRScores(dict(zip(node_ids, x.tolist())), it, converged, residual)


def top_passages(scores: PPRScores, view, k: int) -> list[tuple[str, float]]:
    """Passages by descending score, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(((pid, scores.scores[pid]) for pid in view.passage_ids), key=lambda t: (-t[1], t[0]))
    return ranked[:k]
