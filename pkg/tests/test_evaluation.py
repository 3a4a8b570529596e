import json
import time

import pytest

from conftest import CORPUS_DIR
from propgraph.errors import DanglingReferenceError, DataError, EmptyInputError
from propgraph.evaluation import (
    QueryCase,
    answer_f1,
    format_sweep_table,
    normalize_answer,
    parse_sweep,
    read_cases,
    recall_at_k,
    run_eval,
    run_sweep,
    write_report,
)
from propgraph.pipeline import PipelineConfig

# hand-computed: (retrieved, gold, k, expected)
RECALL_CASES = [
    (["a", "b", "c"], {"a", "d"}, 2, 0.5),
    (["x", "a"], {"a"}, 1, 0.0),
    (["a", "b"], {"a", "b"}, 5, 1.0),
    (["b", "a", "c"], {"a", "b", "c"}, 2, 2 / 3),
    (["c", "b", "a"], ["a", "a"], 3, 1.0),
]

# hand-computed: (prediction, golds, expected)
F1_CASES = [
    ("The 1952", ["1952"], 1.0),
    ("1952", ["1953"], 0.0),
    ("1952", ["1950", "1952"], 1.0),
    ("Paris France", ["paris"], 2 / 3),
    ("the cat sat", ["a cat sat down"], 0.8),
    ("John Smith", ["Smith, John"], 1.0),
    ("x y y", ["y y z"], 2 / 3),
    ("", [""], 1.0),
    ("the", ["1952"], 0.0),
    ("An apple.", ["apple"], 1.0),
]


@pytest.mark.parametrize("retrieved, gold, k, expected", RECALL_CASES)
def test_recall_hand_cases(retrieved, gold, k, expected):
    assert recall_at_k(retrieved, gold, k) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("prediction, golds, expected", F1_CASES)
def test_f1_hand_cases(prediction, golds, expected):
    assert answer_f1(prediction, golds) == pytest.approx(expected, abs=1e-12)


def test_metric_errors():
    with pytest.raises(EmptyInputError):
        recall_at_k(["a"], set(), 5)
    with pytest.raises(ValueError):
        recall_at_k(["a"], {"a"}, 0)
    with pytest.raises(EmptyInputError):
        answer_f1("x", [])


def test_normalize_answer():
    assert normalize_answer("  The  Vatican, City! ") == "vatican city"
    assert normalize_answer("Anatomy") == "anatomy"


def test_case_parsing(tmp_path):
    cases = read_cases(CORPUS_DIR / "cases.jsonl")
    assert [c.id for c in cases] == ["c1", "c2", "c3"]
    with pytest.raises(DataError):
        QueryCase.from_dict({"id": "x"})
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    with pytest.raises(DataError):
        read_cases(bad)


def test_run_eval_on_fixture(fixture_graph, provider):
    cases = read_cases(CORPUS_DIR / "cases.jsonl")
    preds = {cases[0].id: f"The {cases[0].answers[0]}"} if cases[0].answers else {}
    report = run_eval(fixture_graph, cases, PipelineConfig(), provider, k=5, predictions=preds, parallelism=2)
    assert [c.id for c in report.cases] == sorted(c.id for c in cases)
    assert report.failures == 0
    assert 0 <= report.mean_recall <= 1
    for c in report.cases:
        assert len(c.retrieved) == 5
    if preds:
        assert report.cases[0].f1 == 1.0
    data = json.loads(report.to_json())
    assert "runtime" not in data and data["aggregate"]["cases"] == 3
    assert "runtime" in report.to_dict(include_runtime=True)


def test_run_eval_rejects_unknown_gold(fixture_graph, provider):
    with pytest.raises(DanglingReferenceError):
        run_eval(fixture_graph, [QueryCase("x", "q", ("missing",))], PipelineConfig(), provider)
    with pytest.raises(EmptyInputError):
        run_eval(fixture_graph, [], PipelineConfig(), provider)


def test_run_eval_records_failures_and_timeouts(fixture_graph, provider):
    gold = (fixture_graph.passage_ids[0],)
    cases = [QueryCase("empty", "   ", gold), QueryCase("ok", "Radio City", gold)]
    report = run_eval(fixture_graph, cases, PipelineConfig(), provider)
    failed = {c.id: c for c in report.cases}
    assert failed["empty"].recall == 0 and "EmptyInputError" in failed["empty"].error
    assert failed["ok"].error is None

    class Slow:
        dimension = provider.dimension

        def embed(self, text, role="document"):
            time.sleep(0.3)
            return provider.embed(text, role)

        def embed_texts(self, texts, role="document"):
            return provider.embed_texts(texts, role)

    report = run_eval(fixture_graph, [QueryCase("slow", "Radio City", gold)], PipelineConfig(), Slow(), timeout=0.05)
    assert report.cases[0].error.startswith("timeout")


def test_sweep(fixture_graph, provider, tmp_path):
    name, values = parse_sweep("lmax=1,2,3")
    assert (name, values) == ("beam.max_length", [1, 2, 3])
    with pytest.raises(ValueError):
        parse_sweep("lmax")
    cases = read_cases(CORPUS_DIR / "cases.jsonl")
    reports = run_sweep(fixture_graph, cases, PipelineConfig(), provider, name, values)
    assert [r.config["beam"]["max_length"] for _, r in reports] == [1, 2, 3]
    table = format_sweep_table(name, reports)
    assert table.splitlines()[0].startswith("beam.max_length") and len(table.splitlines()) == 5
    write_report(reports[0][1], tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["k"] == 5
