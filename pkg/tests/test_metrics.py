import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vea.errors import DataError
from vea.metrics import (
    ORACLE_MNIST_VEA_CONFUSION,
    Averaging,
    BinaryCounts,
    ConfusionMatrix,
    aggregate,
    binary_counts_for_class,
    binary_mcc,
    binary_metrics,
    confusion_from_predictions,
    multiclass_mcc,
    report_to_csv,
)

TABLE = ConfusionMatrix(ORACLE_MNIST_VEA_CONFUSION)


def mcc_from_counts(tp, tn, fp, fn):
    tp, tn, fp, fn = int(tp), int(tn), int(fp), int(fn)
    den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return 0.0 if den == 0 else (tp * tn - fp * fn) / den


# -- embedded table -------------------------------------------------------------

def test_table_shape_and_supports():
    assert TABLE.counts.shape == (10, 10)
    assert TABLE.total == 3000
    assert TABLE.support().tolist() == [300] * 10
    assert int(np.trace(TABLE.counts)) == 2916


def test_table_macro_values():
    rep = aggregate(TABLE)
    assert rep.averaging is Averaging.MACRO
    assert rep.accuracy == 2916 / 3000 == 0.972
    for name in ("precision", "sensitivity", "f1"):
        assert abs(getattr(rep, name) - 0.9720) <= 5e-4, name
    assert abs(rep.specificity - 0.9969) <= 5e-4
    assert abs(rep.mcc - 0.9689) <= 5e-4


def test_table_exact_derived_values():
    rep = aggregate(TABLE)
    # balanced supports: macro sensitivity is exactly the accuracy
    assert rep.sensitivity == pytest.approx(0.972, abs=1e-15)
    assert rep.specificity == pytest.approx(np.mean([
        (2700 - (TABLE.counts[:, k].sum() - TABLE.counts[k, k])) / 2700 for k in range(10)]), abs=1e-15)
    c = ORACLE_MNIST_VEA_CONFUSION.astype(float)
    n, t, rows, cols = c.sum(), np.trace(c), c.sum(1), c.sum(0)
    want = (n * t - rows @ cols) / math.sqrt((n**2 - rows @ rows) * (n**2 - cols @ cols))
    assert rep.mcc == pytest.approx(want, abs=1e-14)
    assert rep.mcc == pytest.approx(0.96889, abs=1e-5)
    assert rep.mcc_one_vs_rest == pytest.approx(0.96888, abs=1e-5)


def test_class_big_one_vs_rest():
    assert binary_counts_for_class(TABLE, 0) == BinaryCounts(tp=293, tn=2693, fp=7, fn=7)


def test_class_big_binary_metrics():
    m = binary_metrics(BinaryCounts(293, 2693, 7, 7))
    assert m["precision"] == pytest.approx(293 / 300) and m["sensitivity"] == pytest.approx(293 / 300)
    assert m["precision"] == pytest.approx(0.97667, abs=5e-6)
    assert m["f1"] == pytest.approx(0.97667, abs=5e-6)
    assert m["specificity"] == pytest.approx(2693 / 2700)


# -- binary metrics ---------------------------------------------------------------

def test_perfect_classifier():
    m = binary_metrics(BinaryCounts(50, 50, 0, 0))
    assert all(v == 1.0 for v in m.values())


def test_perfectly_wrong():
    m = binary_metrics(BinaryCounts(0, 0, 50, 50))
    assert m["accuracy"] == 0.0 and m["mcc"] == -1.0
    assert m["precision"] == m["sensitivity"] == m["f1"] == m["specificity"] == 0.0


def test_zero_over_zero_is_zero():
    m = binary_metrics(BinaryCounts(0, 10, 0, 0))
    assert m["precision"] == m["sensitivity"] == m["f1"] == m["mcc"] == 0.0
    assert not any(math.isnan(v) for v in m.values())


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        BinaryCounts(-1, 0, 0, 0)


# -- confusion construction ---------------------------------------------------------

def test_perfect_predictions_diagonal():
    y = np.arange(5).repeat(3)
    cm = confusion_from_predictions(y, y, 5)
    np.testing.assert_array_equal(cm.counts, np.eye(5, dtype=int) * 3)


def test_swapped_predictions_antidiagonal():
    cm = confusion_from_predictions([0, 1], [1, 0], 2)
    np.testing.assert_array_equal(cm.counts, [[0, 1], [1, 0]])


def test_matches_direct_tally():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 10, 500), rng.integers(0, 10, 500)
    want = np.zeros((10, 10), int)
    for a, b in zip(t, p):
        want[a, b] += 1
    np.testing.assert_array_equal(confusion_from_predictions(t, p, 10).counts, want)


def test_out_of_range_label_names_index():
    with pytest.raises(DataError, match="index 2"):
        confusion_from_predictions([0, 1, 3], [0, 1, 1], 3)
    with pytest.raises(DataError, match="predicted label -1"):
        confusion_from_predictions([0], [-1], 3)


def test_identity_one_vs_rest():
    cm = ConfusionMatrix(np.eye(10, dtype=int) * 300)
    assert binary_counts_for_class(cm, 4) == BinaryCounts(300, 2700, 0, 0)
    assert multiclass_mcc(cm) == 1.0


def test_one_vs_rest_matches_per_sample_tally():
    rng = np.random.default_rng(1)
    t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
    cm = confusion_from_predictions(t, p, 4)
    for c in range(4):
        b = binary_counts_for_class(cm, c)
        assert b.tp == np.sum((t == c) & (p == c))
        assert b.fp == np.sum((t != c) & (p == c))
        assert b.fn == np.sum((t == c) & (p != c))
        assert b.tn == np.sum((t != c) & (p != c))
    with pytest.raises(IndexError):
        binary_counts_for_class(cm, 4)


def test_confusion_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ConfusionMatrix([[1, -1], [0, 0]])
    with pytest.raises(ValueError):
        aggregate(ConfusionMatrix(np.zeros((3, 3), int)))


def test_confusion_csv_roundtrip():
    cm = ConfusionMatrix(ORACLE_MNIST_VEA_CONFUSION, tuple("abcdefghij"))
    text = cm.to_csv()
    assert text.splitlines()[0] == "true\\pred,a,b,c,d,e,f,g,h,i,j"
    assert text.splitlines()[1] == "a,293,0,1,0,0,0,0,4,1,1"
    back = ConfusionMatrix.from_csv(text)
    np.testing.assert_array_equal(back.counts, cm.counts)
    assert back.class_names == cm.class_names


def test_report_csv_layout():
    text = report_to_csv(TABLE)
    head, per_class = text.split("\n\n")
    lines = head.splitlines()
    assert lines[0] == "metric,macro,micro"
    assert [ln.split(",")[0] for ln in lines[1:]] == [
        "accuracy", "precision", "sensitivity", "specificity", "f1", "mcc", "mcc_one_vs_rest"]
    assert lines[1] == "accuracy,0.972000,0.972000"
    assert per_class.splitlines()[0] == "class,precision,sensitivity,specificity,f1"
    assert len(per_class.splitlines()) == 11


# -- multiclass MCC --------------------------------------------------------------------

def test_multiclass_mcc_zero_denominator():
    assert multiclass_mcc(ConfusionMatrix([[5, 0], [5, 0]])) == 0.0


@settings(max_examples=300)
@given(arrays(np.int64, (2, 2), elements=st.integers(0, 10**6)))
def test_k2_equals_binary_formula(c):
    assume(c.sum() > 0)
    cm = ConfusionMatrix(c)
    # class 1 as positive
    assert abs(multiclass_mcc(cm) - mcc_from_counts(c[1, 1], c[0, 0], c[0, 1], c[1, 0])) <= 1e-12
    assert abs(binary_mcc(BinaryCounts(c[1, 1], c[0, 0], c[0, 1], c[1, 0])) - mcc_from_counts(c[1, 1], c[0, 0], c[0, 1], c[1, 0])) <= 1e-12


# -- properties -------------------------------------------------------------------------

matrices = st.integers(2, 7).flatmap(
    lambda k: arrays(np.int64, (k, k), elements=st.integers(0, 60))).filter(lambda m: m.sum() > 0)


@settings(max_examples=200)
@given(matrices, st.randoms(use_true_random=False))
def test_permutation_invariance(counts, rnd):
    k = counts.shape[0]
    perm = list(range(k))
    rnd.shuffle(perm)
    a = aggregate(ConfusionMatrix(counts))
    b = aggregate(ConfusionMatrix(counts[np.ix_(perm, perm)]))
    for name in ("accuracy", "precision", "sensitivity", "specificity", "f1", "mcc"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


@settings(max_examples=200)
@given(matrices)
def test_micro_precision_recall_equal_accuracy(counts):
    rep = aggregate(ConfusionMatrix(counts), Averaging.MICRO)
    assert rep.precision == pytest.approx(rep.accuracy, abs=1e-12)
    assert rep.sensitivity == pytest.approx(rep.accuracy, abs=1e-12)


@settings(max_examples=200)
@given(matrices, st.sampled_from(list(Averaging)))
def test_metric_ranges(counts, averaging):
    rep = aggregate(ConfusionMatrix(counts), averaging)
    for name in ("accuracy", "precision", "sensitivity", "specificity", "f1"):
        assert 0.0 <= getattr(rep, name) <= 1.0
    assert -1.0 <= rep.mcc <= 1.0 and -1.0 <= rep.mcc_one_vs_rest <= 1.0


@settings(max_examples=200)
@given(matrices, st.integers(2, 50))
def test_scaling_invariance(counts, factor):
    a, b = aggregate(ConfusionMatrix(counts)), aggregate(ConfusionMatrix(counts * factor))
    for name in ("accuracy", "precision", "sensitivity", "specificity", "f1", "mcc"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


@settings(max_examples=300)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_f1_harmonic_mean_bound(tp, tn, fp, fn):
    m = binary_metrics(BinaryCounts(tp, tn, fp, fn))
    p, r = m["precision"], m["sensitivity"]
    assert m["f1"] <= (p + r) / 2 + 1e-12
    if p + r > 0:
        equal = math.isclose(p, r, abs_tol=1e-12)
        assert math.isclose(m["f1"], (p + r) / 2, abs_tol=1e-12) == equal
