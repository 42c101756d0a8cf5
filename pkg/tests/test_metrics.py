import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radnet.errors import ArgumentError
from radnet.metrics import ConfusionMatrix, EvalReport, accuracy, confusion, per_class_metrics

# published test-set confusion matrices (rows true, columns predicted)
BINARY_CM = [[198, 2], [12, 188]]                       # non-Covid, COVID
THREE_CM = [[195, 2, 3], [0, 94, 6], [2, 10, 88]]       # Covid, Normal, Pneumonia


def r2(v):
    return round(v, 2)


def test_confusion_basics():
    np.testing.assert_array_equal(confusion([0, 1, 2], [0, 1, 2], 3).counts, np.eye(3))
    np.testing.assert_array_equal(confusion([0], [1], 2).counts, [[0, 1], [0, 0]])
    with pytest.raises(ArgumentError):
        confusion([0, 1], [0], 2)
    with pytest.raises(ArgumentError):
        confusion([0, 3], [0, 1], 3)


def test_confusion_reconstructs_binary_table():
    t = [0] * 200 + [1] * 200
    p = [0] * 198 + [1] * 2 + [0] * 12 + [1] * 188
    np.testing.assert_array_equal(confusion(t, p, 2).counts, BINARY_CM)


def test_binary_table_metrics():
    m = per_class_metrics(ConfusionMatrix(BINARY_CM))
    # COVID is class 1
    assert (r2(m["precision"][1]), r2(m["recall"][1]), r2(m["f1"][1])) == (0.99, 0.94, 0.96)
    assert (r2(m["precision"][0]), r2(m["recall"][0]), r2(m["f1"][0])) == (0.94, 0.99, 0.97)
    assert m["precision"][1] == 188 / 190 and m["f1"][1] == 188 / 195


def test_three_class_table_metrics():
    m = per_class_metrics(ConfusionMatrix(THREE_CM))
    assert (r2(m["precision"][0]), r2(m["recall"][0]), r2(m["f1"][0])) == pytest.approx((0.99, 0.97, 0.98), abs=0.01)
    assert r2(m["precision"][1]) == 0.89
    assert (r2(m["recall"][1]), r2(m["f1"][1])) == (0.94, 0.91)
    assert (r2(m["precision"][2]), r2(m["recall"][2]), r2(m["f1"][2])) == (0.91, 0.88, 0.89)


def test_accuracy_tables():
    a = accuracy(ConfusionMatrix(BINARY_CM))
    assert a["standard"] == 0.965
    assert abs(round(100 * a["standard"], 2) - 96.50) <= 0.01
    b = accuracy(ConfusionMatrix(THREE_CM))
    assert b["standard"] == 377 / 400
    assert abs(round(100 * b["standard"], 2) - 94.24) <= 0.01 + 1e-9


def test_accuracy_edge_cases():
    assert accuracy(ConfusionMatrix([[0, 3], [4, 0]]))["standard"] == 0.0
    with pytest.raises(ArgumentError):
        accuracy(ConfusionMatrix(np.zeros((2, 2))))


def test_zero_denominator_flagged():
    m = per_class_metrics(ConfusionMatrix([[5, 0, 0], [0, 0, 0], [1, 0, 2]]))
    assert m["precision"][1] == 0.0 and 1 in m["undefined"]
    r = EvalReport.from_confusion(ConfusionMatrix([[5, 0], [0, 0]]), ["a", "b"])
    assert r.to_dict()["undefined_metrics"] == ["b"]
    assert "undefined" in r.to_text()


def test_invalid_matrices():
    with pytest.raises(ArgumentError):
        ConfusionMatrix([[1, 2, 3]])
    with pytest.raises(ArgumentError):
        ConfusionMatrix([[1, -1], [0, 1]])


cms = st.integers(2, 4).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 50), min_size=n, max_size=n), min_size=n, max_size=n)
).filter(lambda c: sum(map(sum, c)) > 0)


@settings(max_examples=200, deadline=None)
@given(cms)
def test_micro_formula_equals_standard_accuracy(counts):
    a = accuracy(ConfusionMatrix(counts))
    assert abs(a["standard"] - a["paper_formula"]) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(cms)
def test_metric_ranges_and_macro_f1(counts):
    cm = ConfusionMatrix(counts)
    m = per_class_metrics(cm)
    for key in ("precision", "recall", "f1"):
        assert all(0.0 <= v <= 1.0 for v in m[key])
    macro = float(np.mean(m["f1"]))
    diagonal = not np.any(cm.counts - np.diag(np.diag(cm.counts)))
    all_present = np.all(np.diag(cm.counts) > 0)
    assert macro <= 1.0
    assert (macro == 1.0) == (diagonal and all_present)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60), st.randoms())
def test_permutation_invariance(pairs, rnd):
    t, p = zip(*pairs)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    t2, p2 = zip(*shuffled)
    a = EvalReport.from_labels(t, p, ["x", "y", "z"]).to_dict()
    b = EvalReport.from_labels(t2, p2, ["x", "y", "z"]).to_dict()
    assert a == b


def test_report_serialization():
    r = EvalReport.from_confusion(ConfusionMatrix(BINARY_CM), ["non-Covid", "COVID-19"], split="test")
    d = json.loads(r.to_json())
    assert list(d)[:7] == ["classes", "n_samples", "confusion_matrix", "accuracy", "paper_accuracy",
                           "per_class", "undefined_metrics"]
    assert d["split"] == "test" and d["n_samples"] == 400
    assert d["per_class"][1]["precision"] == 188 / 190  # full precision in JSON
    text = r.to_text()
    assert "COVID-19        0.99    0.94      0.96" in text
    assert "Accuracy: 96.50" in text
    with pytest.raises(ArgumentError):
        EvalReport.from_confusion(ConfusionMatrix(BINARY_CM), ["only-one"])
