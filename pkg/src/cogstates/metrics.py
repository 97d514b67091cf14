"""Confusion matrices and per-class precision/recall/F1.

Matrix orientation is rows = true class, columns = predicted class, in the
canonical task order. Metrics with a zero denominator are reported as 0.0
and flagged undefined instead of NaN, so aggregated reports stay numeric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import TASKS


class MetricsError(Exception):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows true, cols predicted
    class_names: tuple = TASKS

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetric:
    value: float
    defined: bool


@dataclass
class ClassMetrics:
    accuracy: float
    precision: list[ClassMetric]
    recall: list[ClassMetric]
    f1: list[ClassMetric]
    class_names: tuple = TASKS


def confusion(true_labels, predicted_labels, n_classes: int = len(TASKS)) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise MetricsError(
            f"label lists differ in length: {true_labels.shape} vs {predicted_labels.shape}")
    if true_labels.size and (true_labels.min() < 0 or true_labels.max() >= n_classes
                             or predicted_labels.min() < 0 or predicted_labels.max() >= n_classes):
        raise MetricsError(f"labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    names = TASKS if n_classes == len(TASKS) else tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts, names)


def accuracy(cm: ConfusionMatrix) -> float:
    """Correct predictions over all observations."""
    total = cm.total
    return float(np.trace(cm.counts)) / total if total else 0.0


def _ratio(numer: float, denom: float) -> ClassMetric:
    if denom == 0:
        return ClassMetric(0.0, False)
    return ClassMetric(float(numer) / float(denom), True)


def precision(cm: ConfusionMatrix, cls: int) -> float:
    """True positives over everything predicted as ``cls``."""
    return _ratio(cm.counts[cls, cls], cm.counts[:, cls].sum()).value


def recall(cm: ConfusionMatrix, cls: int) -> float:
    """True positives over everything truly ``cls``."""
    return _ratio(cm.counts[cls, cls], cm.counts[cls, :].sum()).value


def f1(cm: ConfusionMatrix, cls: int) -> float:
    """Harmonic mean of precision and recall."""
    p = _ratio(cm.counts[cls, cls], cm.counts[:, cls].sum())
    r = _ratio(cm.counts[cls, cls], cm.counts[cls, :].sum())
    if not (p.defined and r.defined) or p.value + r.value == 0.0:
        return 0.0
    return 2.0 * p.value * r.value / (p.value + r.value)


def class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    precisions, recalls, f1s = [], [], []
    for c in range(cm.n_classes):
        p = _ratio(cm.counts[c, c], cm.counts[:, c].sum())
        r = _ratio(cm.counts[c, c], cm.counts[c, :].sum())
        precisions.append(p)
        recalls.append(r)
        if p.defined and r.defined and p.value + r.value > 0.0:
            f1s.append(ClassMetric(2.0 * p.value * r.value / (p.value + r.value), True))
        else:
            f1s.append(ClassMetric(0.0, False))
    return ClassMetrics(accuracy(cm), precisions, recalls, f1s, cm.class_names)


def f1_vector(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class F1 as a plain array (undefined entries as 0)."""
    return np.array([f1(cm, c) for c in range(cm.n_classes)])


def metrics_to_json(cm: ConfusionMatrix) -> str:
    m = class_metrics(cm)
    payload = {
        "accuracy": m.accuracy,
        "classes": {
            name: {
                "precision": m.precision[i].value,
                "precision_defined": m.precision[i].defined,
                "recall": m.recall[i].value,
                "recall_defined": m.recall[i].defined,
                "f1": m.f1[i].value,
                "f1_defined": m.f1[i].defined,
            }
            for i, name in enumerate(m.class_names)
        },
        "total": cm.total,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def confusion_to_csv(path, cm: ConfusionMatrix) -> None:
    """Rows = true class, columns = predicted class."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted", *cm.class_names])
        for i, name in enumerate(cm.class_names):
            writer.writerow([name, *cm.counts[i].tolist()])
