"""Label-scan prediction, accuracy reports and paired-comparison statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import NUM_CLASSES, embed_labels
from .errors import ContractError, DegenerateSampleError
from .ffcore import forward_all


def label_scores(net, X, skip_first=False, chunk=10000):
    """(N, 10) matrix: for each candidate label, goodness summed over layers.

    ``skip_first`` drops the first layer from the sum.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    scores = np.zeros((X.shape[0], NUM_CLASSES))
    first = 1 if skip_first else 0
    for start in range(0, X.shape[0], chunk):
        xs = X[start:start + chunk]
        for c in range(NUM_CLASSES):
            embedded = embed_labels(xs, np.full(xs.shape[0], c))
            passes = forward_all(net, embedded)
            total = np.zeros(xs.shape[0])
            for p in passes[first:]:
                total = total + p.goodness
            scores[start:start + chunk, c] = total
    return scores


def select_label(scores):
    """Row-wise argmax; ties go to the lowest class id."""
    return np.argmax(np.atleast_2d(scores), axis=1)


def predict_batch(net, X, skip_first=False):
    return select_label(label_scores(net, X, skip_first))


def predict(net, x, skip_first=False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError(f"predict takes one input vector, got shape {x.shape}")
    return int(predict_batch(net, x[None, :], skip_first)[0])


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list
    confusion: np.ndarray

    @property
    def total(self):
        return int(self.confusion.sum())

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
        }


def report_from_predictions(labels, predicted):
    """Confusion matrix (rows: true class, cols: predicted) and accuracies.

    Classes absent from ``labels`` get a per-class accuracy of 0.0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if labels.size == 0:
        raise ContractError("cannot evaluate an empty dataset")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / counts[c]) if counts[c] else 0.0 for c in range(NUM_CLASSES)]
    accuracy = float(np.trace(confusion) / labels.size)
    return EvalReport(accuracy, per_class, confusion)


def evaluate(net, ds, skip_first=False):
    if len(ds) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    return report_from_predictions(ds.labels, predict_batch(net, ds.images, skip_first))


@dataclass
class StatReport:
    t_statistic: float
    degrees_of_freedom: int
    cohens_d: float
    mean_difference: float
    degenerate: bool = False
    note: str = ""


def _sample(values, name):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size < 2:
        raise ContractError(f"{name} needs at least 2 values, got {arr.size}")
    return arr


def paired_t_test(a, b):
    """Paired t-test on ``d = a - b``.

    Fills ``t_statistic``, ``degrees_of_freedom`` and ``mean_difference``;
    ``cohens_d`` is left as NaN (see :func:`cohens_d`).
    """
    a = _sample(a, "a")
    b = _sample(b, "b")
    if a.shape != b.shape:
        raise ContractError(f"paired samples differ in length: {a.size} vs {b.size}")
    d = a - b
    n = d.size
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("degenerate sample: differences have zero variance")
    mean = float(np.mean(d))
    return StatReport(mean / (sd / math.sqrt(n)), n - 1, float("nan"), mean)


def cohens_d(a, b):
    """Mean difference over the pooled standard deviation (n_a + n_b - 2 dof)."""
    a = _sample(a, "a")
    b = _sample(b, "b")
    pooled_var = (
        (a.size - 1) * np.var(a, ddof=1) + (b.size - 1) * np.var(b, ddof=1)
    ) / (a.size + b.size - 2)
    if pooled_var == 0.0:
        raise DegenerateSampleError("degenerate sample: pooled variance is zero")
    return float((np.mean(a) - np.mean(b)) / math.sqrt(pooled_var))


def compare_samples(a, b):
    """Paired t and Cohen's d for ``a`` vs ``b``; degenerate cases are flagged, not raised."""
    a = _sample(a, "a")
    b = _sample(b, "b")
    mean_diff = float(np.mean(a - b)) if a.shape == b.shape else float(np.mean(a) - np.mean(b))
    notes = []
    try:
        t = paired_t_test(a, b).t_statistic
    except DegenerateSampleError as exc:
        t = float("nan")
        notes.append(str(exc))
    try:
        d = cohens_d(a, b)
    except DegenerateSampleError as exc:
        d = float("nan")
        notes.append(str(exc))
    return StatReport(t, a.size - 1, d, mean_diff, degenerate=bool(notes), note="; ".join(notes))
