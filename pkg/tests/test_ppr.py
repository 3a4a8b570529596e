import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from oracles import dense_ppr
from propgraph.errors import SeedError
from propgraph.graph import PassageInput, PropositionInput, build_graph
from propgraph.ppr import SeedDistribution, run_ppr, top_passages


def _two_node_graph():
    # one entity, one passage, joined by a containment edge
    p = [PassageInput("psg", "passage", np.array([1.0, 0.0]))]
    props = [PropositionInput("q", "solo", "psg", ("solo",), np.array([1.0, 0.0]))]
    return build_graph(props, p, {"e:solo": np.array([0.0, 1.0])})


def test_two_node_closed_form():
    # x_e = (1-d) + d x_p, x_p = d x_e, with d = 0.5 gives (2/3, 1/3)
    g = _two_node_graph()
    out = run_ppr(g, SeedDistribution.from_weights({"e:solo": 1.0}), 0.5, tolerance=1e-14)
    assert out.converged
    assert out["e:solo"] == pytest.approx(2 / 3, abs=1e-12)
    assert out["psg"] == pytest.approx(1 / 3, abs=1e-12)


def test_dangling_mass_returns_to_seeds():
    g = random_graph(5, isolated_passages=2)
    isolated = [p for p in g.passage_ids if not g.neighbors(p)]
    assert isolated
    seeds = SeedDistribution.from_weights({isolated[0]: 1.0})
    out = run_ppr(g, seeds, 0.75, tolerance=1e-14)
    assert out[isolated[0]] == pytest.approx(1.0)
    assert sum(out.scores.values()) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("damping", [0.75, 0.45])
@pytest.mark.parametrize("seed", range(6))
def test_matches_dense_oracle(seed, damping):
    g = random_graph(seed)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(g.node_ids), size=4, replace=False)
    seeds = SeedDistribution.from_weights({g.node_ids[i]: float(rng.random() + 0.1) for i in picks})
    got = run_ppr(g, seeds, damping, tolerance=1e-13)
    want = dense_ppr(g.node_ids, g.edges, seeds.entries, damping)
    assert max(abs(got[n] - want[n]) for n in g.node_ids) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.05, 0.95))
def test_scores_form_a_distribution(seed, damping):
    g = random_graph(seed)
    out = run_ppr(g, SeedDistribution.uniform(g.entity_ids[:3]), damping)
    values = np.array(list(out.scores.values()))
    assert (values >= 0).all()
    assert abs(values.sum() - 1) < 1e-6


def test_seed_distribution_validation():
    with pytest.raises(SeedError):
        SeedDistribution.from_weights({})
    with pytest.raises(SeedError):
        SeedDistribution.from_weights({"a": 0.0})
    with pytest.raises(SeedError):
        SeedDistribution.from_weights({"a": -1.0, "b": 2.0})
    with pytest.raises(SeedError):
        SeedDistribution({"a": 0.5})
    assert SeedDistribution.from_weights({"a": 1.0, "b": 3.0}).entries == {"a": 0.25, "b": 0.75}


def test_unknown_seed_and_bad_damping(fixture_graph):
    with pytest.raises(SeedError):
        run_ppr(fixture_graph, SeedDistribution.from_weights({"e:nowhere": 1.0}), 0.5)
    with pytest.raises(ValueError):
        run_ppr(fixture_graph, SeedDistribution.uniform(fixture_graph.entity_ids[:1]), 1.0)


def test_non_convergence_is_flagged_not_raised(fixture_graph, caplog):
    seeds = SeedDistribution.uniform(fixture_graph.entity_ids[:2])
    out = run_ppr(fixture_graph, seeds, 0.95, tolerance=1e-15, max_iterations=3)
    assert not out.converged and out.iterations == 3
    assert "did not converge" in caplog.text


def test_top_passages_tie_break(fixture_graph):
    out = run_ppr(fixture_graph, SeedDistribution.uniform(fixture_graph.entity_ids), 0.5)
    ranked = top_passages(out, fixture_graph, len(fixture_graph.passage_ids))
    assert [p for p, _ in ranked] == sorted(fixture_graph.passage_ids, key=lambda p: (-out[p], p))
    with pytest.raises(ValueError):
        top_passages(out, fixture_graph, 0)
