"""Confusion matrix and the five one-vs-rest classification metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


@dataclass
class ConfusionCounts:
    """Rows are true classes, columns predicted classes."""

    matrix: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "ConfusionCounts":
        m = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(m, (np.asarray(y_true, np.int64), np.asarray(y_pred, np.int64)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    def tp(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp()

    def tn(self) -> np.ndarray:
        return self.total - self.tp() - self.fp() - self.fn()


def accuracy(tp, fp, fn, tn) -> float:
    return _ratio(tp + tn, tp + tn + fp + fn)


def precision(tp, fp) -> float:
    return _ratio(tp, tp + fp)


def recall(tp, fn) -> float:
    return _ratio(tp, tp + fn)


def specificity(tn, fp) -> float:
    return _ratio(tn, tn + fp)


def f1_score(tp, fp, fn) -> float:
    return _ratio(2 * tp, 2 * tp + fp + fn)


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[dict]
    macro: dict
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "per_class": self.per_class,
                "macro": self.macro, "confusion": self.confusion}


def report(cm: ConfusionCounts, class_names=None) -> MetricsReport:
    """Per-class metrics and their unweighted (macro) means; accuracy is top-1."""
    k = cm.num_classes
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    tp, fp, fn, tn = cm.tp(), cm.fp(), cm.fn(), cm.tn()
    rows = []
    for i in range(k):
        rows.append({
            "name": names[i],
            "precision": precision(tp[i], fp[i]),
            "recall": recall(tp[i], fn[i]),
            "specificity": specificity(tn[i], fp[i]),
            "f1": f1_score(tp[i], fp[i], fn[i]),
            "tp": int(tp[i]), "fp": int(fp[i]), "fn": int(fn[i]), "tn": int(tn[i]),
        })
    keys = ("precision", "recall", "specificity", "f1")
    macro = {key: float(np.mean([r[key] for r in rows])) for key in keys}
    top1 = _ratio(np.trace(cm.matrix), cm.total)
    macro["accuracy"] = top1
    return MetricsReport(top1, rows, macro, cm.matrix.tolist())
