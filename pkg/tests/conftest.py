from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from propgraph.embedding import MockEmbeddingProvider  # noqa: E402
from propgraph.extraction import load_records, read_corpus  # noqa: E402
from propgraph.graph import PassageInput, PropositionInput, build_graph  # noqa: E402
from propgraph.indexing import build_index_graph  # noqa: E402
from propgraph.normalize import entity_id  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
CORPUS_DIR = FIXTURES / "corpus"
PROMPTS_DIR = FIXTURES / "prompts"


@pytest.fixture(scope="session")
def provider():
    return MockEmbeddingProvider()


@pytest.fixture(scope="session")
def fixture_corpus():
    passages, failures = read_corpus(CORPUS_DIR / "corpus.jsonl")
    assert not failures
    return passages, load_records(CORPUS_DIR / "records.jsonl")


@pytest.fixture(scope="session")
def fixture_graph(fixture_corpus, provider):
    passages, records = fixture_corpus
    return build_index_graph(passages, records, provider)


def unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_graph(seed: int, n_passages: int = 6, n_props: int = 10, n_entities: int = 12, d: int = 16,
                 near_duplicates: int = 3, isolated_passages: int = 1, tau_syn: float = 0.8):
    """Small random proposition graph with all three edge kinds.

    Some entity embeddings are perturbed copies of others so synonymy edges
    appear; a few passages own no propositions and end up dangling.
    """
    rng = np.random.default_rng(seed)
    names = [f"ent{i}" for i in range(n_entities)]
    vecs = {entity_id(n): unit(rng, d) for n in names}
    keys = list(vecs)
    for i in range(min(near_duplicates, n_entities // 2)):
        src, dst = keys[2 * i], keys[2 * i + 1]
        vecs[dst] = vecs[src] + 0.1 * unit(rng, d)
    passages = [PassageInput(f"psg{i}", f"passage {i}", unit(rng, d)) for i in range(n_passages + isolated_passages)]
    props = []
    for j in range(n_props):
        k = int(rng.integers(1, 4))
        ents = tuple(rng.choice(names, size=k, replace=False).tolist())
        props.append(PropositionInput(f"prop{j:02d}", f"proposition {j}", f"psg{int(rng.integers(0, n_passages))}",
                                      ents, unit(rng, d)))
    return build_graph(props, passages, vecs, tau_syn)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
