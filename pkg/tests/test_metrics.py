import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mebm.metrics import MetricsReport, confusion_matrix, f1_macro, topk_acc_macro


def oracle_f1(truth, pred):
    classes = sorted(set(truth) | set(pred))
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


def oracle_topk(truth, probs, k):
    per_class = {}
    for t, row in zip(truth, probs):
        ranked = sorted(range(len(row)), key=lambda c: (-row[c], c))
        per_class.setdefault(t, []).append(t in ranked[:k])
    return sum(sum(v) / len(v) for v in per_class.values()) / len(per_class)


def test_hand_cases():
    assert f1_macro([0, 1, 0, 1], [0, 0, 0, 0]) == pytest.approx(1 / 3)
    truth = np.arange(39)
    assert f1_macro(truth, truth) == 1.0
    probs = np.full((1, 39), 0.01)
    probs[0, 2] = 0.9
    for k in (1, 3, 5, 39):
        assert topk_acc_macro([2], probs, k) == 1.0


def test_f1_random_against_oracle():
    g = np.random.default_rng(0)
    for _ in range(500):
        n = int(g.integers(1, 60))
        nc = int(g.integers(1, 39))
        truth = g.integers(0, nc, n)
        pred = np.where(g.random(n) < 0.5, truth, g.integers(0, 39, n))
        assert abs(f1_macro(truth, pred) - oracle_f1(truth.tolist(), pred.tolist())) <= 1e-12


def test_topk_random_against_oracle_with_ties():
    g = np.random.default_rng(1)
    for i in range(500):
        n = int(g.integers(1, 30))
        truth = g.integers(0, 39, n)
        # coarse values force many ties
        probs = g.integers(0, 4 if i % 2 else 1000, (n, 39)).astype(np.float64) + 1
        probs /= probs.sum(axis=1, keepdims=True)
        k = int(g.integers(1, 40))
        assert abs(topk_acc_macro(truth, probs, k) - oracle_topk(truth.tolist(), probs.tolist(), k)) <= 1e-12


def test_uniform_predictions_tie_break_by_class_id():
    probs = np.full((39, 39), 1 / 39)
    truth = np.arange(39)
    # only classes 0..k-1 are in the top k of a uniform row
    assert topk_acc_macro(truth, probs, 3) == pytest.approx(3 / 39)
    assert topk_acc_macro(truth, probs, 39) == 1.0


def test_confusion_matrix_counts():
    g = np.random.default_rng(2)
    truth, pred = g.integers(0, 39, 300), g.integers(0, 39, 300)
    cm = confusion_matrix(truth, pred)
    brute = np.zeros((39, 39), dtype=int)
    for t, p in zip(truth, pred):
        brute[t, p] += 1
    np.testing.assert_array_equal(cm, brute)
    assert cm.sum() == 300
    np.testing.assert_array_equal(confusion_matrix(truth, truth), np.diag(np.bincount(truth, minlength=39)))


def test_errors():
    with pytest.raises(ValueError):
        f1_macro([], [])
    with pytest.raises(ValueError):
        f1_macro([0, 39], [0, 1])
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0])
    with pytest.raises(ValueError):
        topk_acc_macro([0], np.full((1, 39), 1 / 39), 0)
    with pytest.raises(ValueError):
        topk_acc_macro([0], np.full((1, 39), 1 / 39), 40)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 38), st.integers(0, 38)), min_size=1, max_size=80),
       st.permutations(list(range(39))))
def test_f1_invariant_under_relabeling(pairs, perm):
    truth = np.array([t for t, _ in pairs])
    pred = np.array([p for _, p in pairs])
    perm = np.array(perm)
    assert abs(f1_macro(truth, pred) - f1_macro(perm[truth], perm[pred])) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_topk_monotone_in_k(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 40))
    truth = g.integers(0, 39, n)
    probs = g.dirichlet(np.ones(39), n)
    accs = [topk_acc_macro(truth, probs, k) for k in range(1, 40)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))


def test_report_contract():
    g = np.random.default_rng(3)
    truth = g.integers(0, 39, 200)
    probs = g.dirichlet(np.ones(39), 200)
    rep = MetricsReport.from_predictions(truth, probs)
    assert rep.confusion.sum() == rep.n_samples == 200
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), np.bincount(truth, minlength=39))
    assert rep.top1 <= rep.top3 <= rep.top5
    doc = json.loads(rep.to_json())
    assert doc["f1_macro"] == rep.f1_macro and len(doc["confusion"]) == 39
    assert "F1 macro" in rep.table()
