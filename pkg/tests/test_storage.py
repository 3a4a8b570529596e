import json

import numpy as np
import pytest

from conftest import random_graph
from propgraph.errors import IndexIntegrityError
from propgraph.storage import EMBEDDINGS_FILE, GRAPH_FILE, MANIFEST_FILE, load_index, read_manifest, save_index


def _files(d):
    return {name: (d / name).read_bytes() for name in (GRAPH_FILE, EMBEDDINGS_FILE, MANIFEST_FILE)}


def test_round_trip_is_byte_identical(fixture_graph, tmp_path):
    save_index(fixture_graph, tmp_path / "a", "mock-256")
    loaded, manifest = load_index(tmp_path / "a")
    save_index(loaded, tmp_path / "b", manifest.provider_fingerprint)
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_round_trip_preserves_graph(fixture_graph, tmp_path):
    save_index(fixture_graph, tmp_path, "mock-256")
    loaded, _ = load_index(tmp_path)
    assert loaded.node_ids == fixture_graph.node_ids
    assert loaded.proposition_ids == fixture_graph.proposition_ids
    assert loaded.edges == fixture_graph.edges
    for eid, e in fixture_graph.entities.items():
        assert np.array_equal(loaded.entities[eid].embedding, e.embedding)
    assert (loaded.weight_matrix() != fixture_graph.weight_matrix()).nnz == 0


def test_timestamp_from_source_date_epoch(fixture_graph, tmp_path, monkeypatch):
    assert save_index(fixture_graph, tmp_path / "a", "m").build_timestamp is None
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    assert save_index(fixture_graph, tmp_path / "b", "m").build_timestamp == 1700000000


@pytest.mark.parametrize("seed", range(5))
def test_random_round_trip(seed, tmp_path):
    g = random_graph(seed)
    save_index(g, tmp_path / "a", "x")
    loaded, _ = load_index(tmp_path / "a")
    save_index(loaded, tmp_path / "b", "x")
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_tampered_graph_is_rejected(fixture_graph, tmp_path):
    save_index(fixture_graph, tmp_path, "m")
    path = tmp_path / GRAPH_FILE
    path.write_bytes(path.read_bytes().replace(b"Mantua", b"Mantva", 1))
    with pytest.raises(IndexIntegrityError, match="hash"):
        load_index(tmp_path)


def test_tampered_embeddings_are_rejected(fixture_graph, tmp_path):
    save_index(fixture_graph, tmp_path, "m")
    path = tmp_path / EMBEDDINGS_FILE
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(IndexIntegrityError):
        load_index(tmp_path)


def test_missing_and_unsupported(fixture_graph, tmp_path):
    with pytest.raises(IndexIntegrityError):
        load_index(tmp_path / "nothing")
    save_index(fixture_graph, tmp_path, "m")
    (tmp_path / EMBEDDINGS_FILE).unlink()
    with pytest.raises(IndexIntegrityError):
        load_index(tmp_path)
    save_index(fixture_graph, tmp_path, "m")
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
    manifest["schema_version"] = 99
    (tmp_path / MANIFEST_FILE).write_text(json.dumps(manifest))
    with pytest.raises(IndexIntegrityError):
        load_index(tmp_path)


def test_manifest_counts(fixture_graph, tmp_path):
    save_index(fixture_graph, tmp_path, "m")
    m = read_manifest(tmp_path)
    assert m.counts["propositions"] == len(fixture_graph.proposition_ids)
    assert m.counts["total_edges"] == len(fixture_graph.edges)
    assert m.dimension == 256
