"""On-disk index format.

An index directory holds three files:

``graph.jsonl``
    One JSON object per line, each with ``"v": 1`` and a ``"kind"`` of
    ``entity``, ``passage``, ``proposition`` or ``edge``. Node and proposition
    records carry ``row``, their row in ``embeddings.bin``.
``embeddings.bin``
    16-byte header (magic ``PRPG``, u32 dimension, u32 row count, u32 zero)
    followed by row-major little-endian float32 rows.
``manifest.json``
    Counts, dimension, ``tau_syn``, provider fingerprint and the sha256 of the
    two files above; loading refuses an index whose hash does not match.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IndexIntegrityError
from .graph import EDGE_KINDS, Edge, EntityNode, PassageNode, Proposition, PropositionGraph

SCHEMA_VERSION = 1
MAGIC = b"PRPG"
_HEADER = struct.Struct("<4sIII")

GRAPH_FILE = "graph.jsonl"
EMBEDDINGS_FILE = "embeddings.bin"
MANIFEST_FILE = "manifest.json"


@dataclass
class IndexManifest:
    schema_version: int
    content_hash: str
    counts: dict
    dimension: int
    tau_syn: float
    provider_fingerprint: str
    build_timestamp: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def graph_counts(graph: PropositionGraph) -> dict:
    edges = graph.edge_counts()
    return {
        "entities": len(graph.entity_ids),
        "passages": len(graph.passage_ids),
        "propositions": len(graph.proposition_ids),
        "edges": edges,
        "total_edges": sum(edges.values()),
    }


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _serialize(graph: PropositionGraph) -> tuple[bytes, bytes]:
    lines: list[str] = []
    rows: list[np.ndarray] = []
    for eid in graph.entity_ids:
        e = graph.entities[eid]
        lines.append(
            _dumps(
                {
                    "v": SCHEMA_VERSION,
                    "kind": "entity",
                    "id": e.id,
                    "surface": e.surface,
                    "source_passages": sorted(e.source_passages),
                    "row": len(rows),
                }
            )
        )
        rows.append(e.embedding)
    for pid in graph.passage_ids:
        p = graph.passages[pid]
        lines.append(
            _dumps(
                {
                    "v": SCHEMA_VERSION,
                    "kind": "passage",
                    "id": p.id,
                    "text": p.text,
                    "proposition_ids": list(p.proposition_ids),
                    "row": len(rows),
                }
            )
        )
        rows.append(p.embedding)
    for qid in graph.proposition_ids:
        q = graph.propositions[qid]
        lines.append(
            _dumps(
                {
                    "v": SCHEMA_VERSION,
                    "kind": "proposition",
                    "id": q.id,
                    "text": q.text,
                    "passage_id": q.passage_id,
                    "entity_ids": list(q.entity_ids),
                    "row": len(rows),
                }
            )
        )
        rows.append(q.embedding)
    for e in graph.edges:
        prov = list(e.provenance) if isinstance(e.provenance, tuple) else e.provenance
        lines.append(
            _dumps(
                {
                    "v": SCHEMA_VERSION,
                    "kind": "edge",
                    "edge_kind": e.kind,
                    "endpoints": list(e.endpoints),
                    "weight": e.weight,
                    "provenance": prov,
                }
            )
        )
    graph_bytes = ("\n".join(lines) + "\n").encode("utf-8")
    matrix = np.stack(rows).astype("<f4") if rows else np.zeros((0, graph.dimension), dtype="<f4")
    emb_bytes = _HEADER.pack(MAGIC, graph.dimension, matrix.shape[0], 0) + matrix.tobytes(order="C")
    return graph_bytes, emb_bytes


def _content_hash(graph_bytes: bytes, emb_bytes: bytes) -> str:
    h = hashlib.sha256()
    h.update(graph_bytes)
    h.update(emb_bytes)
    return h.hexdigest()


def save_index(
    graph: PropositionGraph,
    out_dir: str | os.PathLike,
    provider_fingerprint: str,
    diagnostics: Optional[dict] = None,
) -> IndexManifest:
    """Write the index directory; deterministic for identical graphs.

    ``build_timestamp`` comes from ``SOURCE_DATE_EPOCH`` when set and is
    otherwise null, so rebuilding an unchanged corpus reproduces every byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph_bytes, emb_bytes = _serialize(graph)
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    manifest = IndexManifest(
        schema_version=SCHEMA_VERSION,
        content_hash=_content_hash(graph_bytes, emb_bytes),
        counts=graph_counts(graph),
        dimension=graph.dimension,
        tau_syn=graph.tau_syn,
        provider_fingerprint=provider_fingerprint,
        build_timestamp=int(epoch) if epoch else None,
        diagnostics=diagnostics or {},
    )
    (out / GRAPH_FILE).write_bytes(graph_bytes)
    (out / EMBEDDINGS_FILE).write_bytes(emb_bytes)
    (out / MANIFEST_FILE).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def read_manifest(index_dir: str | os.PathLike) -> IndexManifest:
    path = Path(index_dir) / MANIFEST_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return IndexManifest(**data)
    except FileNotFoundError:
        raise IndexIntegrityError(f"no manifest at {path}") from None
    except (json.JSONDecodeError, TypeError) as exc:
        raise IndexIntegrityError(f"unreadable manifest {path}: {exc}") from None


def _read_embeddings(emb_bytes: bytes) -> np.ndarray:
    if len(emb_bytes) < _HEADER.size:
        raise IndexIntegrityError("embeddings.bin is truncated")
    magic, dim, nrows, _ = _HEADER.unpack_from(emb_bytes)
    if magic != MAGIC:
        raise IndexIntegrityError(f"bad embeddings magic {magic!r}")
    body = emb_bytes[_HEADER.size :]
    if len(body) != dim * nrows * 4:
        raise IndexIntegrityError("embeddings.bin size does not match its header")
    return np.frombuffer(body, dtype="<f4").reshape(nrows, dim).astype(np.float32)


def load_index(index_dir: str | os.PathLike) -> tuple[PropositionGraph, IndexManifest]:
    root = Path(index_dir)
    manifest = read_manifest(root)
    if manifest.schema_version != SCHEMA_VERSION:
        raise IndexIntegrityError(f"unsupported schema version {manifest.schema_version}")
    try:
        graph_bytes = (root / GRAPH_FILE).read_bytes()
        emb_bytes = (root / EMBEDDINGS_FILE).read_bytes()
    except FileNotFoundError as exc:
        raise IndexIntegrityError(f"index file missing: {exc.filename}") from None
    if _content_hash(graph_bytes, emb_bytes) != manifest.content_hash:
        raise IndexIntegrityError("content hash mismatch: index files were modified or corrupted")

    matrix = _read_embeddings(emb_bytes)

    def vec(row: int) -> np.ndarray:
        v = matrix[row].copy()
        v.flags.writeable = False
        return v

    entities, passages, props, edges = [], [], [], []
    for lineno, line in enumerate(graph_bytes.decode("utf-8").splitlines(), 1):
        rec = json.loads(line)
        if rec.get("v") != SCHEMA_VERSION:
            raise IndexIntegrityError(f"graph.jsonl line {lineno}: unsupported record version")
        kind = rec["kind"]
        if kind == "entity":
            entities.append(EntityNode(rec["id"], rec["surface"], vec(rec["row"]), frozenset(rec["source_passages"])))
        elif kind == "passage":
            passages.append(PassageNode(rec["id"], rec["text"], vec(rec["row"]), tuple(rec["proposition_ids"])))
        elif kind == "proposition":
            props.append(
                Proposition(rec["id"], rec["text"], tuple(rec["entity_ids"]), rec["passage_id"], vec(rec["row"]))
            )
        elif kind == "edge":
            if rec["edge_kind"] not in EDGE_KINDS:
                raise IndexIntegrityError(f"graph.jsonl line {lineno}: unknown edge kind")
            prov = rec["provenance"]
            edges.append(
                Edge(rec["edge_kind"], tuple(rec["endpoints"]), rec["weight"], tuple(prov) if isinstance(prov, list) else prov)
            )
        else:
            raise IndexIntegrityError(f"graph.jsonl line {lineno}: unknown record kind {kind!r}")

    graph = PropositionGraph(entities, passages, props, edges, manifest.tau_syn)
    if graph_counts(graph) != manifest.counts:
        raise IndexIntegrityError("manifest counts do not match the loaded graph")
    return graph, manifest
