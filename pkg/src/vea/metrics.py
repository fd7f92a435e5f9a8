"""Confusion matrices and the classification metrics built on them.

Per-class metrics use the one-vs-rest reduction of the K x K matrix. Any 0/0
evaluates to 0. Everything is computed in float64.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

METRIC_NAMES = ("accuracy", "precision", "sensitivity", "specificity", "f1", "mcc")


class Averaging(str, enum.Enum):
    MACRO = "macro"
    MICRO = "micro"


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.counts.shape[0]
        if self.counts.ndim != 2 or self.counts.shape != (k, k):
            raise ValueError(f"confusion matrix must be square, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        if not self.class_names:
            self.class_names = tuple(str(i) for i in range(k))
        self.class_names = tuple(self.class_names)
        if len(self.class_names) != k:
            raise ValueError(f"{len(self.class_names)} class names for a {k}x{k} matrix")

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def support(self):
        return self.counts.sum(axis=1)

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name, *map(int, row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        names = tuple(rows[0][1:])
        return cls(np.array([[int(v) for v in r[1:]] for r in rows[1:]]), names)


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return BinaryCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    mcc: float
    averaging: Averaging
    mcc_one_vs_rest: float = 0.0  # macro: mean per-class binary MCC; micro: binary MCC of pooled counts
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)

    def values(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


def confusion_from_predictions(true_labels, predicted_labels, num_classes: int, class_names=()) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels but {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        bad = np.flatnonzero((arr < 0) | (arr >= num_classes))
        if bad.size:
            raise DataError(f"{name} label {arr[bad[0]]} at index {bad[0]} outside [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes), class_names)


def binary_counts_for_class(cm: ConfusionMatrix, c: int) -> BinaryCounts:
    if not 0 <= c < cm.num_classes:
        raise IndexError(f"class index {c} outside [0, {cm.num_classes})")
    tp = int(cm.counts[c, c])
    fp = int(cm.counts[:, c].sum()) - tp
    fn = int(cm.counts[c, :].sum()) - tp
    return BinaryCounts(tp, cm.total - tp - fp - fn, fp, fn)


def binary_mcc(b: BinaryCounts) -> float:
    den = float(b.tp + b.fp) * (b.tp + b.fn) * (b.tn + b.fp) * (b.tn + b.fn)
    if den == 0:
        return 0.0
    return (float(b.tp) * b.tn - float(b.fp) * b.fn) / math.sqrt(den)


def binary_metrics(b: BinaryCounts) -> dict[str, float]:
    precision = _ratio(b.tp, b.tp + b.fp)
    sensitivity = _ratio(b.tp, b.tp + b.fn)
    return {
        "accuracy": _ratio(b.tp + b.tn, b.total),
        "precision": precision,
        "sensitivity": sensitivity,
        "specificity": _ratio(b.tn, b.fp + b.tn),
        "f1": _ratio(2 * precision * sensitivity, precision + sensitivity),
        "mcc": binary_mcc(b),
    }


def multiclass_mcc(cm: ConfusionMatrix) -> float:
    """K-class correlation coefficient; reduces to the binary MCC for K=2."""
    c = cm.counts.astype(np.float64)
    n = c.sum()
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    cov = n * np.trace(c) - rows @ cols
    den = (n * n - rows @ rows) * (n * n - cols @ cols)
    if den <= 0:
        return 0.0
    return float(cov / math.sqrt(den))


def aggregate(cm: ConfusionMatrix, averaging: Averaging | str = Averaging.MACRO) -> MetricReport:
    averaging = Averaging(averaging)
    if cm.total == 0:
        raise ValueError("cannot aggregate an empty confusion matrix")
    per_counts = [binary_counts_for_class(cm, k) for k in range(cm.num_classes)]
    per_metrics = [binary_metrics(b) for b in per_counts]
    per_class = {
        name: {k: m[k] for k in ("precision", "sensitivity", "specificity", "f1")}
        for name, m in zip(cm.class_names, per_metrics)
    }
    if averaging is Averaging.MACRO:
        mean = {k: float(np.mean([m[k] for m in per_metrics])) for k in METRIC_NAMES}
    else:
        pooled = per_counts[0]
        for b in per_counts[1:]:
            pooled = pooled + b
        mean = binary_metrics(pooled)
    return MetricReport(
        accuracy=float(np.trace(cm.counts)) / cm.total,
        precision=mean["precision"],
        sensitivity=mean["sensitivity"],
        specificity=mean["specificity"],
        f1=mean["f1"],
        mcc=multiclass_mcc(cm),
        averaging=averaging,
        mcc_one_vs_rest=mean["mcc"],
        per_class=per_class,
    )


def report_to_csv(cm: ConfusionMatrix) -> str:
    """Macro and micro summary, then a per-class block, separated by a blank line."""
    macro, micro = aggregate(cm, Averaging.MACRO), aggregate(cm, Averaging.MICRO)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "macro", "micro"])
    for name in METRIC_NAMES:
        w.writerow([name, f"{getattr(macro, name):.6f}", f"{getattr(micro, name):.6f}"])
    w.writerow(["mcc_one_vs_rest", f"{macro.mcc_one_vs_rest:.6f}", f"{micro.mcc_one_vs_rest:.6f}"])
    w.writerow([])
    w.writerow(["class", "precision", "sensitivity", "specificity", "f1"])
    for name, vals in macro.per_class.items():
        w.writerow([name, *(f"{vals[k]:.6f}" for k in ("precision", "sensitivity", "specificity", "f1"))])
    return buf.getvalue()


# Confusion matrix of the attention model on the OracleMNIST test set as
# published; rows true, columns predicted, 300 samples per class.
ORACLE_MNIST_VEA_CONFUSION = np.array(
    [
        [293, 0, 1, 0, 0, 0, 0, 4, 1, 1],
        [0, 296, 1, 0, 0, 3, 0, 0, 0, 0],
        [1, 1, 295, 0, 0, 0, 2, 1, 0, 0],
        [0, 0, 0, 285, 4, 0, 1, 0, 5, 5],
        [0, 0, 2, 2, 293, 2, 0, 0, 1, 0],
        [0, 3, 0, 0, 1, 296, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0, 294, 1, 3, 0],
        [6, 0, 1, 0, 3, 0, 2, 286, 0, 2],
        [0, 2, 1, 1, 1, 0, 0, 1, 291, 3],
        [0, 0, 0, 8, 2, 0, 0, 1, 2, 287],
    ],
    dtype=np.int64,
)

# Published OracleMNIST metrics for the attention model.
ORACLE_MNIST_VEA_REPORTED = {
    "accuracy": 0.9720,
    "precision": 0.9720,
    "sensitivity": 0.9720,
    "specificity": 0.9969,
    "f1": 0.9720,
    "mcc": 0.9689,
}
