"""Accuracy, per-class and macro-averaged precision/recall/F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]  # rows true class, columns predicted

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def support(self) -> int:
        return int(np.sum(self.confusion))

    def summary(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.macro_precision,
            "recall": self.macro_recall,
            "f1": self.macro_f1,
        }

    def to_dict(self) -> dict:
        return {
            **self.summary(),
            "per_class": {"precision": list(self.precision), "recall": list(self.recall), "f1": list(self.f1)},
            "confusion": [list(r) for r in self.confusion],
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {p.size} predictions")
    if t.size == 0:
        raise ValueError("cannot score an empty prediction set")
    for name, v in (("y_true", t), ("y_pred", p)):
        if v.min() < 0 or v.max() >= num_classes:
            raise ValueError(f"{name} has a class outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def compute_metrics(y_true, y_pred, num_classes: int = 3) -> Metrics:
    """Undefined ratios count as 0; macro means run over all classes, present or not."""
    cm = confusion_matrix(y_true, y_pred, num_classes)
    tp = np.diag(cm).astype(np.float64)
    precision = _ratio(tp, cm.sum(axis=0).astype(np.float64))
    recall = _ratio(tp, cm.sum(axis=1).astype(np.float64))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return Metrics(
        accuracy=float(tp.sum() / cm.sum()),
        precision=tuple(precision.tolist()),
        recall=tuple(recall.tolist()),
        f1=tuple(f1.tolist()),
        confusion=tuple(tuple(int(x) for x in row) for row in cm),
    )
