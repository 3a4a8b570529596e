"""Passage recall and token-level answer F1 over query sets, plus parameter sweeps."""

from __future__ import annotations

import json
import logging
import os
import re
import string
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .embedding import EmbeddingProvider
from .errors import DanglingReferenceError, DataError, EmptyInputError
from .graph import PropositionGraph
from .pipeline import PipelineConfig, retrieve

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


@dataclass(frozen=True)
class QueryCase:
    id: str
    query: str
    gold_passage_ids: tuple[str, ...]
    answers: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: dict) -> "QueryCase":
        try:
            return cls(
                id=str(data["id"]),
                query=str(data["query"]),
                gold_passage_ids=tuple(data["gold_passage_ids"]),
                answers=tuple(data.get("answers") or ()),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed query case: {exc}") from exc


def read_cases(path: str | os.PathLike) -> list[QueryCase]:
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                cases.append(QueryCase.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return cases


def recall_at_k(retrieved: Sequence[str], gold, k: int) -> float:
    """Fraction of ``gold`` found among the first ``k`` retrieved ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gold = set(gold)
    if not gold:
        raise EmptyInputError("gold passage set is empty")
    return len(gold.intersection(retrieved[:k])) / len(gold)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _token_f1(predicted: str, gold: str) -> float:
    pred_toks = normalize_answer(predicted).split()
    gold_toks = normalize_answer(gold).split()
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    common = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_toks)
    recall = common / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def answer_f1(predicted: str, golds: Sequence[str]) -> float:
    """Best token-level F1 of ``predicted`` against any of ``golds``."""
    if not golds:
        raise EmptyInputError("no gold answers")
    return max(_token_f1(predicted, g) for g in golds)


@dataclass
class CaseResult:
    id: str
    recall: float
    f1: Optional[float]
    retrieved: list[str]
    error: Optional[str] = None


@dataclass
class EvalReport:
    k: int
    cases: list[CaseResult]
    config: dict
    runtime: dict = field(default_factory=dict)

    @property
    def mean_recall(self) -> float:
        return float(np.mean([c.recall for c in self.cases]))

    @property
    def mean_f1(self) -> Optional[float]:
        scored = [c.f1 for c in self.cases if c.f1 is not None]
        return float(np.mean(scored)) if scored else None

    @property
    def failures(self) -> int:
        return sum(c.error is not None for c in self.cases)

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "k": self.k,
            "aggregate": {
                f"recall@{self.k}": self.mean_recall,
                "f1": self.mean_f1,
                "cases": len(self.cases),
                "failures": self.failures,
            },
            "config": self.config,
            "cases": [asdict(c) for c in self.cases],
        }
        if include_runtime:
            out["runtime"] = self.runtime
        return out

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _config_snapshot(config: PipelineConfig) -> dict:
    return asdict(config)


def run_eval(
    graph: PropositionGraph,
    cases: Sequence[QueryCase],
    config: PipelineConfig,
    provider: EmbeddingProvider,
    k: int = 5,
    predictions: Optional[Mapping[str, str]] = None,
    parallelism: int = 4,
    timeout: float = DEFAULT_TIMEOUT,
) -> EvalReport:
    """Retrieve for every case and score it.

    A case that raises or exceeds ``timeout`` seconds is recorded with recall
    0 and its error rather than aborting the run. F1 is computed only for
    cases that have gold answers and an entry in ``predictions``.
    """
    if not cases:
        raise EmptyInputError("no query cases")
    for case in cases:
        for pid in case.gold_passage_ids:
            if pid not in graph.passages:
                raise DanglingReferenceError("gold passage", pid)
    predictions = predictions or {}
    started = time.perf_counter()

    def work(case: QueryCase) -> tuple[list[str], float]:
        t0 = time.perf_counter()
        result, _ = retrieve(graph, case.query, k, config, provider)
        return result.passage_ids, time.perf_counter() - t0

    results: list[CaseResult] = []
    latencies = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [(case, pool.submit(work, case)) for case in cases]
        for case, fut in futures:
            f1 = None
            if case.answers and case.id in predictions:
                f1 = answer_f1(predictions[case.id], case.answers)
            try:
                retrieved, latency = fut.result(timeout=timeout)
            except FutureTimeout:
                logger.warning("case %s timed out after %.1fs", case.id, timeout)
                results.append(CaseResult(case.id, 0.0, f1, [], f"timeout after {timeout}s"))
                continue
            except Exception as exc:  # recorded per case, run continues
                logger.warning("case %s failed: %s", case.id, exc)
                results.append(CaseResult(case.id, 0.0, f1, [], f"{type(exc).__name__}: {exc}"))
                continue
            latencies.append(latency)
            results.append(CaseResult(case.id, recall_at_k(retrieved, case.gold_passage_ids, k), f1, retrieved))

    results.sort(key=lambda c: c.id)
    runtime = {
        "total_seconds": time.perf_counter() - started,
        "mean_query_seconds": float(np.mean(latencies)) if latencies else None,
    }
    return EvalReport(k, results, _config_snapshot(config), runtime)


def parse_sweep(text: str) -> tuple[str, list]:
    """``"lmax=1,2,3,4"`` -> ``("beam.max_length", [1, 2, 3, 4])``."""
    aliases = {"lmax": "beam.max_length", "b": "beam.beam_width", "beam_width": "beam.beam_width"}
    if "=" not in text:
        raise ValueError(f"sweep must look like name=v1,v2,...; got {text!r}")
    name, values = text.split("=", 1)
    name = aliases.get(name.strip().lower(), name.strip())
    parsed = [json.loads(v) for v in values.split(",") if v.strip()]
    if not parsed:
        raise ValueError("sweep has no values")
    return name, parsed


def run_sweep(
    graph: PropositionGraph,
    cases: Sequence[QueryCase],
    config: PipelineConfig,
    provider: EmbeddingProvider,
    parameter: str,
    values: Sequence,
    k: int = 5,
    **kwargs,
) -> list[tuple[object, EvalReport]]:
    return [(v, run_eval(graph, cases, config.with_overrides(**{parameter: v}), provider, k, **kwargs)) for v in values]


def format_sweep_table(parameter: str, reports: Sequence[tuple[object, EvalReport]]) -> str:
    """Plain-text comparison table, one row per swept value."""
    if not reports:
        return ""
    k = reports[0][1].k
    header = f"{parameter:<20} {'Recall@' + str(k):>10} {'F1':>8} {'failed':>7}"
    lines = [header, "-" * len(header)]
    for value, rep in reports:
        f1 = f"{100 * rep.mean_f1:8.1f}" if rep.mean_f1 is not None else f"{'-':>8}"
        lines.append(f"{str(value):<20} {100 * rep.mean_recall:10.1f} {f1} {rep.failures:>7}")
    return "\n".join(lines)


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")
