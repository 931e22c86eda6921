import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcm.metrics import compute_metrics, confusion_matrix

from .conftest import TABLE1_CLASS_COUNTS


def brute_force(y_true, y_pred, C):
    """Count TP/FP/FN class by class with plain loops."""
    prec, rec, f1 = [], [], []
    for c in range(C):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        P = tp / (tp + fp) if tp + fp else 0.0
        R = tp / (tp + fn) if tp + fn else 0.0
        prec.append(P)
        rec.append(R)
        f1.append(2 * P * R / (P + R) if P + R else 0.0)
    acc = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return acc, sum(prec) / C, sum(rec) / C, sum(f1) / C


def test_perfect_predictions():
    m = compute_metrics([0, 1, 2, 2], [0, 1, 2, 2])
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0


def test_worked_example():
    m = compute_metrics([0, 0, 1, 2], [0, 1, 1, 2], 3)
    assert m.accuracy == 0.75
    assert m.macro_precision == pytest.approx(0.8333, abs=5e-5)
    assert m.macro_recall == pytest.approx(0.8333, abs=5e-5)
    assert m.macro_f1 == pytest.approx(0.7778, abs=5e-5)
    assert m.confusion == ((1, 1, 0), (0, 1, 0), (0, 0, 1))


def test_majority_class_on_table1_ratios():
    y_true = np.repeat([0, 1, 2], list(TABLE1_CLASS_COUNTS.values()))
    m = compute_metrics(y_true, np.zeros_like(y_true))
    assert round(m.accuracy, 4) == 0.4827
    # absent predictions contribute zero precision to the macro mean
    assert m.precision[1:] == (0.0, 0.0)


def test_matches_brute_force_oracle():
    g = np.random.default_rng(0)
    for _ in range(1000):
        C = int(g.integers(2, 6))
        n = int(g.integers(1, 40))
        t, p = g.integers(C, size=n).tolist(), g.integers(C, size=n).tolist()
        m = compute_metrics(t, p, C)
        acc, P, R, F = brute_force(t, p, C)
        assert abs(m.accuracy - acc) <= 1e-12
        assert abs(m.macro_precision - P) <= 1e-12
        assert abs(m.macro_recall - R) <= 1e-12
        assert abs(m.macro_f1 - F) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50), st.permutations(range(4)))
def test_macro_f1_permutation_invariant(pairs, perm):
    t, p = map(list, zip(*pairs))
    perm = list(perm)
    a = compute_metrics(t, p, 4).macro_f1
    b = compute_metrics([perm[x] for x in t], [perm[x] for x in p], 4).macro_f1
    assert a == pytest.approx(b, abs=1e-12)


def test_confusion_invariants():
    g = np.random.default_rng(1)
    t, p = g.integers(3, size=100), g.integers(3, size=100)
    cm = confusion_matrix(t, p, 3)
    assert cm.sum() == 100
    assert compute_metrics(t, p).accuracy == np.trace(cm) / 100


def test_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        compute_metrics([0, 1], [0])
    with pytest.raises(ValueError, match="outside"):
        compute_metrics([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        compute_metrics([], [], 3)
