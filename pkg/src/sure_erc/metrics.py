"""Accuracy, per-class precision/recall/F1 and support-weighted F1."""
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ShapeError


@dataclass
class ClassScore:
    label: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    accuracy: float
    weighted_f1: float
    per_class: list
    confusion: list  # rows gold, columns predicted

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["accuracy"], d["weighted_f1"], [ClassScore(**c) for c in d["per_class"]], d["confusion"])


def _ratio(num, den):
    return num / den if den else 0.0


def compute_metrics(predictions, gold, num_labels):
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    gold = np.asarray(gold, dtype=np.int64).ravel()
    if pred.size != gold.size or pred.size == 0:
        raise ShapeError(f"need equal, non-zero lengths; got {pred.size} predictions and {gold.size} labels")
    for name, arr in (("prediction", pred), ("label", gold)):
        if arr.min() < 0 or arr.max() >= num_labels:
            raise ShapeError(f"{name} out of range [0, {num_labels}): [{arr.min()}, {arr.max()}]")
    cm = kernels.confusion_matrix(pred, gold, num_labels)
    total = int(cm.sum())
    per_class = []
    weighted = 0.0
    for c in range(num_labels):
        tp = int(cm[c, c])
        support = int(cm[c].sum())
        predicted = int(cm[:, c].sum())
        p = _ratio(tp, predicted)
        r = _ratio(tp, support)
        f1 = _ratio(2 * p * r, p + r)
        per_class.append(ClassScore(c, p, r, f1, support))
        weighted += support / total * f1
    return MetricsReport(
        accuracy=float(np.trace(cm)) / total,
        weighted_f1=weighted,
        per_class=per_class,
        confusion=cm.tolist(),
    )


def average_reports(reports):
    """Mean accuracy and weighted F1 over repeated runs."""
    return {
        "accuracy": float(np.mean([r.accuracy for r in reports])),
        "weighted_f1": float(np.mean([r.weighted_f1 for r in reports])),
        "accuracy_std": float(np.std([r.accuracy for r in reports])),
        "weighted_f1_std": float(np.std([r.weighted_f1 for r in reports])),
        "runs": len(reports),
    }
