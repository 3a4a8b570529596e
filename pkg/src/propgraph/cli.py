"""Command-line interface: extract, index, query, eval, stats, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider or network error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .beam import format_path
from .config import RunConfig, load_config
from .embedding import EmbeddingCache, provider_from_config
from .errors import ConfigError, DataError, PropGraphError, ProviderError
from .evaluation import (
    format_sweep_table,
    parse_sweep,
    read_cases,
    run_eval,
    run_sweep,
)
from .extraction import ChatCompletionClient, dump_records, ingest_corpus, read_corpus
from .indexing import build_index_graph
from .pipeline import retrieve
from .storage import graph_counts, load_index, read_manifest, save_index
from .synthetic import planted_chain

logger = logging.getLogger("propgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value, e.g. beam.max_length=1 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="propgraph", description="Proposition-graph retrieval with beam-searched reasoning paths.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="run entity and proposition extraction, write records")
    p.add_argument("--corpus", required=True, help="corpus JSONL: {id, title?, text} per line")
    p.add_argument("--out", required=True, help="output records JSONL")
    p.add_argument("--model", default="llm", help="model name sent to the chat endpoint")
    p.add_argument("--cache-dir", help="directory caching per-passage LLM results")
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--strict", action="store_true", help="exit 2 if any passage fails")

    p = sub.add_parser("index", help="build an index directory from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="index directory")
    p.add_argument("--records", help="pre-extracted records JSONL (skips the LLM)")
    p.add_argument("--model", default="llm")
    p.add_argument("--cache-dir")
    p.add_argument("--strict", action="store_true", help="exit 2 if any passage fails")
    _add_config_args(p)

    p = sub.add_parser("query", help="retrieve passages for a query")
    p.add_argument("index")
    p.add_argument("text", nargs="?", help="query text (omit with --batch)")
    p.add_argument("--k", type=int, default=None, help="number of passages (default: pipeline.k_out)")
    p.add_argument("--explain", action="store_true", help="print the reasoning paths")
    p.add_argument("--dump-scores", metavar="FILE", help="write the full result with diagnostics as JSON")
    p.add_argument("--batch", metavar="FILE", help="JSONL of {id, query}; writes one JSON result per line")
    p.add_argument("--parallelism", type=int, default=4)
    _add_config_args(p)

    p = sub.add_parser("eval", help="score retrieval against gold passages")
    p.add_argument("index")
    p.add_argument("--cases", required=True, help="JSONL of {id, query, gold_passage_ids, answers}")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--predictions", help="JSON object mapping case id to predicted answer (for F1)")
    p.add_argument("--sweep", help="e.g. lmax=1,2,3,4")
    p.add_argument("--out", help="write the machine-readable report here")
    p.add_argument("--timeout", type=float, default=30.0, help="per-query timeout in seconds")
    p.add_argument("--parallelism", type=int, default=4)
    _add_config_args(p)

    p = sub.add_parser("stats", help="print graph statistics of an index")
    p.add_argument("index")

    p = sub.add_parser("synth", help="write a generated planted-chain corpus, records and cases")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_for_query(args) -> tuple:
    cfg: RunConfig = load_config(args.config, args.overrides)
    graph, manifest = load_index(args.index)
    provider = provider_from_config(cfg.provider, cache=_cache(cfg))
    if provider.fingerprint != manifest.provider_fingerprint:
        raise DataError(
            f"index was built with {manifest.provider_fingerprint!r} but the configured provider is {provider.fingerprint!r}"
        )
    return cfg, graph, provider


def _cache(cfg: RunConfig) -> Optional[EmbeddingCache]:
    return EmbeddingCache(cfg.provider.cache_path) if cfg.provider.cache_path else None


def cmd_extract(args) -> int:
    passages, failures = read_corpus(args.corpus)
    for f in failures:
        logger.warning("corpus line %d skipped: %s", f["line"], f["error"])
    result = ingest_corpus(
        passages,
        llm_client=ChatCompletionClient(args.model),
        cache_dir=args.cache_dir,
        parallelism=args.parallelism,
    )
    dump_records(result.records, args.out)
    failed = len(failures) + len(result.failures)
    print(f"extracted {len(result.records)} passages, {failed} failures -> {args.out}")
    return EXIT_DATA if args.strict and failed else EXIT_OK


def cmd_index(args) -> int:
    cfg = load_config(args.config, args.overrides)
    passages, corpus_failures = read_corpus(args.corpus)
    if not passages:
        raise DataError(f"{args.corpus}: no readable passages")
    if args.records:
        ingest = ingest_corpus(passages, fixture_path=args.records)
    else:
        ingest = ingest_corpus(passages, llm_client=ChatCompletionClient(args.model), cache_dir=args.cache_dir)
    provider = provider_from_config(cfg.provider, cache=_cache(cfg))
    graph = build_index_graph(passages, ingest.records, provider, cfg.tau_syn)
    diagnostics = {
        "corpus_failures": corpus_failures,
        "extraction_failures": ingest.failures,
        "extraction": ingest.diagnostics,
    }
    manifest = save_index(graph, args.out, provider.fingerprint, diagnostics)
    counts = manifest.counts
    print(
        f"indexed {counts['passages']} passages, {counts['propositions']} propositions, "
        f"{counts['entities']} entities, {counts['total_edges']} edges -> {args.out}"
    )
    failed = len(corpus_failures) + len(ingest.failures)
    if failed:
        print(f"{failed} passage(s) failed; see manifest diagnostics", file=sys.stderr)
    return EXIT_DATA if args.strict and failed else EXIT_OK


def _render(result, view, explain: bool) -> str:
    lines = []
    for rank, (pid, score) in enumerate(result.passages, 1):
        text = " ".join(view.passages[pid].text.split())
        lines.append(f"{rank}. {pid}\t{score:.6f}\t{text[:100]}")
    if explain:
        lines.append("Reasoning paths:")
        lines.extend(f"  {format_path(view, p)}" for p in result.paths)
    return "\n".join(lines)


def cmd_query(args) -> int:
    if (args.text is None) == (args.batch is None):
        raise UsageError("give either a query text or --batch FILE")
    if args.k is not None and args.k < 1:
        raise UsageError("--k must be >= 1")
    cfg, graph, provider = _load_for_query(args)
    k = args.k or cfg.pipeline.k_out

    if args.batch:
        items = []
        with open(args.batch, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    items.append((str(rec.get("id", len(items))), rec["query"]))

        def work(item):
            qid, text = item
            result, sub = retrieve(graph, text, k, cfg.pipeline, provider)
            return {"id": qid, "query": text, **result.to_dict(sub if args.explain else None)}

        with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
            for out in pool.map(work, items):
                print(json.dumps(out, sort_keys=True, ensure_ascii=False))
        return EXIT_OK

    result, sub = retrieve(graph, args.text, k, cfg.pipeline, provider)
    print(_render(result, sub, args.explain))
    if args.dump_scores:
        payload = {"query": args.text, **result.to_dict(sub)}
        Path(args.dump_scores).write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, graph, provider = _load_for_query(args)
    cases = read_cases(args.cases)
    predictions = None
    if args.predictions:
        predictions = json.loads(Path(args.predictions).read_text(encoding="utf-8"))
    kwargs = dict(predictions=predictions, parallelism=args.parallelism, timeout=args.timeout)

    if args.sweep:
        name, values = parse_sweep(args.sweep)
        try:
            reports = run_sweep(graph, cases, cfg.pipeline, provider, name, values, args.k, **kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad sweep {args.sweep!r}: {exc}") from exc
        print(format_sweep_table(name, reports))
        if args.out:
            payload = {"parameter": name, "reports": [{"value": v, **r.to_dict()} for v, r in reports]}
            Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return EXIT_OK

    report = run_eval(graph, cases, cfg.pipeline, provider, args.k, **kwargs)
    f1 = f"{report.mean_f1:.4f}" if report.mean_f1 is not None else "n/a"
    print(f"cases: {len(report.cases)}  failed: {report.failures}")
    print(f"Recall@{args.k}: {report.mean_recall:.4f}")
    print(f"F1: {f1}")
    for c in report.cases:
        mark = f"  error: {c.error}" if c.error else ""
        print(f"  {c.id}\trecall={c.recall:.3f}{mark}")
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = read_manifest(args.index)
    graph, _ = load_index(args.index)
    counts = graph_counts(graph)
    rows = [
        ("# Propositions", counts["propositions"]),
        ("# Passage Nodes", counts["passages"]),
        ("# Entity Nodes", counts["entities"]),
        ("# Total Edges", counts["total_edges"]),
    ]
    rows += [(f"  {kind} edges", n) for kind, n in sorted(counts["edges"].items())]
    width = max(len(label) for label, _ in rows)
    print(f"{'Statistic':<{width}}  {'Count':>10}")
    for label, n in rows:
        print(f"{label:<{width}}  {n:>10}")
    print(f"dimension {manifest.dimension}, tau_syn {manifest.tau_syn}, provider {manifest.provider_fingerprint}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    passages, records, cases = [], [], []
    for seed in range(args.seed, args.seed + args.instances):
        inst = planted_chain(seed)
        passages += inst.passages
        records += inst.records
        cases.append(inst.case)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.text}, sort_keys=True) + "\n")
    dump_records(records, out / "records.jsonl")
    with open(out / "cases.jsonl", "w", encoding="utf-8") as fh:
        for c in cases:
            rec = {"id": c.id, "query": c.query, "gold_passage_ids": list(c.gold_passage_ids), "answers": list(c.answers)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(passages)} passages and {len(cases)} cases to {out}")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "index": cmd_index,
    "query": cmd_query,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"propgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"propgraph: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"propgraph: provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (PropGraphError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"propgraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
