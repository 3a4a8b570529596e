from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from oracles import dense_ppr, replay_entity_scores
from propgraph.beam import EXACT, JUMP, SYNONYMOUS, BeamConfig, Connection, ReasoningPath, initial_ranking, run_beam_search
from propgraph.errors import ConfigError, EmptyInputError, PathGraphMismatchError, SeedError
from propgraph.graph import PassageInput, PropositionInput, build_graph
from propgraph.pipeline import (
    PipelineConfig,
    build_final_seeds,
    entity_scores_from_paths,
    retrieve,
    stage1,
    stage2,
)

QUERY = "Who was the governor of Vatican City when Serafini died?"


def _e(*xs):
    v = np.zeros(4)
    v[: len(xs)] = xs
    return v


def _hand_graph():
    # q1 holds A and X, q2 holds X and E_B, q3 holds E_A; E_A ~ E_B are near-identical vectors
    passages = [PassageInput("psg1", "one", _e(1)), PassageInput("psg2", "two", _e(0, 1))]
    props = [
        PropositionInput("q1", "A and X", "psg1", ("A", "X"), _e(1)),
        PropositionInput("q2", "X and E_B", "psg2", ("X", "E_B"), _e(0, 1)),
        PropositionInput("q3", "E_A alone", "psg1", ("E_A",), _e(0, 0, 1)),
    ]
    ents = {"e:a": _e(1), "e:x": _e(0, 1), "e:e_b": _e(0, 0, 1, 0.01), "e:e_a": _e(0, 0, 1)}
    return build_graph(props, passages, ents)


def test_hand_case_exact_connection_counts_twice():
    g = _hand_graph()
    s = 0.375
    path = ReasoningPath(("q1", "q2"), (Connection(EXACT, ("e:x", "e:x")),), s)
    got = entity_scores_from_paths([path], g)
    assert got.scores["e:x"] == 2 * s
    assert got.scores["e:a"] == s and got.scores["e:e_b"] == s
    assert got.boosts == {}


def test_hand_case_synonymy_boost():
    g = _hand_graph()
    s = 0.25
    path = ReasoningPath(("q3", "q2"), (Connection(SYNONYMOUS, ("e:e_a", "e:e_b")),), s)
    got = entity_scores_from_paths([path], g)
    assert got.scores["e:e_b"] == 2 * s
    assert got.membership["e:e_b"] == s and got.boosts["e:e_b"] == s
    assert got.scores["e:e_a"] == s and got.scores["e:x"] == s


def test_negative_path_scores_count_as_zero():
    g = _hand_graph()
    got = entity_scores_from_paths([ReasoningPath(("q1",), (), -0.5)], g)
    assert got.scores == {"e:a": 0.0, "e:x": 0.0}


def test_mismatched_paths_raise():
    g = _hand_graph()
    with pytest.raises(PathGraphMismatchError):
        entity_scores_from_paths([ReasoningPath(("nope",), (), 0.5)], g)
    bad = ReasoningPath(("q1", "q2"), (Connection(SYNONYMOUS, ("e:e_a", "e:e_b")),), 0.5)
    with pytest.raises(PathGraphMismatchError):
        entity_scores_from_paths([bad], g)


def _random_paths(graph, rng):
    syn = {(a, b) for e in graph.edges if e.kind == "synonymy" for a, b in (e.endpoints, e.endpoints[::-1])}
    pids = list(graph.proposition_ids)
    paths = []
    for _ in range(int(rng.integers(1, 6))):
        seq = [str(x) for x in rng.choice(pids, size=int(rng.integers(1, 4)), replace=False)]
        conns = []
        for a, b in zip(seq, seq[1:]):
            ea, eb = graph.propositions[a].entity_ids, graph.propositions[b].entity_ids
            pairs = [(x, y) for x in ea for y in eb if (x, y) in syn]
            shared = sorted(set(ea) & set(eb))
            if pairs:
                conns.append(Connection(SYNONYMOUS, pairs[int(rng.integers(len(pairs)))]))
            elif shared:
                conns.append(Connection(EXACT, (shared[0], shared[0])))
            else:
                conns.append(Connection(JUMP))
        # dyadic scores keep every sum exact in floating point
        paths.append(ReasoningPath(tuple(seq), tuple(conns), int(rng.integers(-8, 17)) / 16))
    return paths


def test_rule_replay_on_random_path_sets():
    boosted = 0
    for seed in range(60):
        graph = random_graph(seed, near_duplicates=5)
        paths = _random_paths(graph, np.random.default_rng(seed))
        got = entity_scores_from_paths(paths, graph).scores
        want = replay_entity_scores(
            [(p.propositions, [(c.kind, *(c.entities or (None, None))) for c in p.connections], p.score) for p in paths],
            {pid: graph.propositions[pid].entity_ids for pid in graph.proposition_ids},
        )
        assert got == want
        boosted += any(c.kind == SYNONYMOUS for p in paths for c in p.connections)
    assert boosted >= 5


def _seed_inputs(fixture_graph, provider):
    cfg = PipelineConfig()
    sub, s1 = stage1(fixture_graph, QUERY, cfg, provider)
    paths = run_beam_search(sub, s1.query_embedding, cfg.beam, provider)
    scores = entity_scores_from_paths(paths, sub)
    sims = {p: float(np.dot(sub.passages[p].embedding, s1.query_embedding)) for p in sub.passage_ids}
    return cfg, sub, s1, paths, scores, sims


def test_seed_normalization_chain(fixture_graph, provider):
    cfg, sub, s1, paths, scores, sims = _seed_inputs(fixture_graph, provider)
    seeds, diag = build_final_seeds(sub, s1.query_embedding, s1.top_propositions, paths, scores, sims, cfg)
    assert abs(sum(seeds.entries.values()) - 1) < 1e-12
    for group in ("exploration", "exploitation"):
        assert abs(sum(diag[group].values()) - 1) < 1e-12
        assert len(diag[group]) <= cfg.b_initial
    passage_mass = sum(w for n, w in seeds.entries.items() if sub.is_passage(n))
    assert abs(passage_mass - cfg.lambda_passage) < 1e-12
    for eid, w in seeds.entries.items():
        if sub.is_entity(eid):
            expected = (diag["exploration"].get(eid, 0) + diag["exploitation"].get(eid, 0)) / 2 * (1 - cfg.lambda_passage)
            assert abs(w - expected) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_seeds_invariant_to_path_score_scale(fixture_graph, provider, factor):
    cfg, sub, s1, paths, scores, sims = _seed_inputs(fixture_graph, provider)
    scaled = [replace(p, score=p.score * factor) for p in paths]
    a, _ = build_final_seeds(sub, s1.query_embedding, s1.top_propositions, paths, scores, sims, cfg)
    b, _ = build_final_seeds(sub, s1.query_embedding, s1.top_propositions, scaled,
                             entity_scores_from_paths(scaled, sub), sims, cfg)
    assert a.entries.keys() == b.entries.keys()
    assert all(abs(a.entries[k] - b.entries[k]) < 1e-9 for k in a.entries)


def test_lambda_zero_and_single_modes(fixture_graph, provider):
    cfg, sub, s1, paths, scores, sims = _seed_inputs(fixture_graph, provider)
    seeds, diag = build_final_seeds(sub, s1.query_embedding, s1.top_propositions, paths, scores, sims,
                                    replace(cfg, lambda_passage=0.0))
    assert all(sub.is_entity(n) for n in seeds.entries) and diag["passage_weight"] == 0
    _, diag = build_final_seeds(sub, s1.query_embedding, s1.top_propositions, paths, None, sims,
                                replace(cfg, seed_mode="exploration_only"))
    assert diag["exploitation"] == {} and not diag["entity_scores_consulted"]
    with pytest.raises(ValueError):
        build_final_seeds(sub, s1.query_embedding, s1.top_propositions, paths, None, sims, cfg)
    with pytest.raises(SeedError):
        build_final_seeds(sub, s1.query_embedding, [], [], None, {}, replace(cfg, seed_mode="exploration_only"))


def test_stage1_matches_dense_oracle(fixture_graph, provider):
    cfg = PipelineConfig(k_subgraph=4)
    sub, s1 = stage1(fixture_graph, QUERY, cfg, provider)
    seeds = {e: 1 / len(s1.initial_seeds) for e in s1.initial_seeds}
    dense = dense_ppr(fixture_graph.node_ids, fixture_graph.edges, seeds, 0.75)
    want = sorted(fixture_graph.passage_ids, key=lambda p: (-dense[p], p))[:4]
    assert [p for p, _ in s1.top_passages] == want
    assert set(sub.passage_ids) == set(want)
    ranked = initial_ranking(fixture_graph, s1.query_embedding)
    assert s1.top_propositions == ranked[: cfg.n_prop]


def test_stage1_seed_cap():
    g = random_graph(3)
    cfg = PipelineConfig(n_entity=2)

    class P:
        def embed(self, text, role="document"):
            return np.ones(g.dimension)

    _, s1 = stage1(g, "q", cfg, P())
    assert len(s1.initial_seeds) == 2


def test_retrieve_is_confined_and_prefix_stable(fixture_graph, provider):
    cfg = PipelineConfig(k_subgraph=6)
    r5, sub = retrieve(fixture_graph, QUERY, 5, cfg, provider)
    r2, _ = retrieve(fixture_graph, QUERY, 2, cfg, provider)
    assert len(r5.passages) == 5
    assert r2.passage_ids == r5.passage_ids[:2]
    assert set(r5.passage_ids) <= set(sub.passage_ids)
    d = r5.diagnostics
    assert d["subgraph"]["passages"] == 6
    assert abs(sum(d["final_seeds"].values()) - 1) < 1e-12
    assert d["ppr"]["stage2_converged"]
    out = r5.to_dict(view=sub)
    assert len(out["explanations"]) == len(out["paths"])


def test_exploration_only_skips_entity_scores(fixture_graph, provider):
    cfg = PipelineConfig(seed_mode="exploration_only")
    result, _ = retrieve(fixture_graph, QUERY, 5, cfg, provider)
    groups = result.diagnostics["seed_groups"]
    assert groups["exploitation"] == {} and not groups["entity_scores_consulted"]


def test_stage2_defaults_to_config_k(fixture_graph, provider):
    cfg = PipelineConfig(k_out=3)
    sub, s1 = stage1(fixture_graph, QUERY, cfg, provider)
    assert len(stage2(sub, s1, cfg, provider).passages) == 3


def test_config_validation_and_overrides():
    with pytest.raises(ConfigError):
        PipelineConfig(damping_stage1=1.0)
    with pytest.raises(ConfigError):
        PipelineConfig(seed_mode="neither")
    with pytest.raises(ConfigError):
        PipelineConfig(n_prop=0)
    cfg = PipelineConfig().with_overrides(**{"beam.max_length": 1, "k_out": 2})
    assert cfg.beam == BeamConfig(max_length=1) and cfg.k_out == 2
    assert cfg.effective_p_initial == cfg.beam.beam_width
    assert PipelineConfig(p_initial=7).effective_p_initial == 7


def test_empty_query_rejected(fixture_graph, provider):
    with pytest.raises(EmptyInputError):
        retrieve(fixture_graph, "  ", 5, PipelineConfig(), provider)
    with pytest.raises(ValueError):
        retrieve(fixture_graph, QUERY, 0, PipelineConfig(), provider)
