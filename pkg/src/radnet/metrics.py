"""Confusion matrices, per-class precision/recall/F1 and accuracy reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[i, j]: true class i predicted as j

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ArgumentError(f"confusion matrix must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ArgumentError("confusion counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, pred_labels, n: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ArgumentError(f"{t.size} true labels vs {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ArgumentError(f"{name} labels must lie in [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return (float(num) / float(den), False) if den > 0 else (0.0, True)


def per_class_metrics(cm: ConfusionMatrix) -> dict:
    """Precision, recall and F1 per class.

    F1 is TP / (TP + 0.5 (FP + FN)). A zero denominator scores 0 and the
    class index is listed under ``undefined``.
    """
    c = cm.counts
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    out = {"precision": [], "recall": [], "f1": [], "undefined": []}
    for k in range(cm.n_classes):
        prec, bad_p = _ratio(tp[k], tp[k] + fp[k])
        rec, bad_r = _ratio(tp[k], tp[k] + fn[k])
        f1, bad_f = _ratio(tp[k], tp[k] + 0.5 * (fp[k] + fn[k]))
        out["precision"].append(prec)
        out["recall"].append(rec)
        out["f1"].append(f1)
        if bad_p or bad_r or bad_f:
            out["undefined"].append(k)
    return out


def accuracy(cm: ConfusionMatrix) -> dict:
    """Standard accuracy (trace / total) and the pooled TP / (TP + 0.5 (FP + FN)).

    For single-label data pooled FP and FN both equal the off-diagonal mass,
    so the two coincide.
    """
    total = cm.total
    if total <= 0:
        raise ArgumentError("accuracy of an empty confusion matrix")
    tp = float(np.trace(cm.counts))
    fp = fn = float(total - tp)
    return {"standard": tp / total, "paper_formula": tp / (tp + 0.5 * (fp + fn))}


@dataclass
class EvalReport:
    classes: list
    confusion: ConfusionMatrix
    precision: list
    recall: list
    f1: list
    accuracy: float
    paper_accuracy: float
    n_samples: int
    undefined: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, classes=None, **extra) -> "EvalReport":
        classes = list(classes) if classes is not None else [str(i) for i in range(cm.n_classes)]
        if len(classes) != cm.n_classes:
            raise ArgumentError(f"{len(classes)} class names for a {cm.n_classes}-class matrix")
        pcm = per_class_metrics(cm)
        acc = accuracy(cm)
        return cls(classes, cm, pcm["precision"], pcm["recall"], pcm["f1"],
                   acc["standard"], acc["paper_formula"], cm.total, pcm["undefined"], extra)

    @classmethod
    def from_labels(cls, true_labels, pred_labels, classes, **extra) -> "EvalReport":
        return cls.from_confusion(confusion(true_labels, pred_labels, len(classes)), classes, **extra)

    def to_dict(self) -> dict:
        # insertion order is the serialized key order
        return {
            "classes": self.classes,
            "n_samples": self.n_samples,
            "confusion_matrix": self.confusion.counts.tolist(),
            "accuracy": self.accuracy,
            "paper_accuracy": self.paper_accuracy,
            "per_class": [
                {"class": name, "precision": p, "recall": r, "f1": f}
                for name, p, r, f in zip(self.classes, self.precision, self.recall, self.f1)
            ],
            "undefined_metrics": [self.classes[i] for i in self.undefined],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        width = max(len("Class"), *(len(c) for c in self.classes))
        lines = [
            f"{'Class':<{width}}  Precision  Recall  F1-score",
            "-" * (width + 29),
        ]
        for name, p, r, f in zip(self.classes, self.precision, self.recall, self.f1):
            lines.append(f"{name:<{width}}  {p:>9.2f}  {r:>6.2f}  {f:>8.2f}")
        lines.append("")
        lines.append(f"Accuracy: {100 * self.accuracy:.2f}  (n={self.n_samples})")
        lines.append("")
        lines.append("Confusion matrix (rows: true, columns: predicted)")
        cw = max(width, *(len(str(v)) for v in self.confusion.counts.ravel()))
        lines.append(" " * (width + 2) + "  ".join(f"{c:>{cw}}" for c in self.classes))
        for name, row in zip(self.classes, self.confusion.counts):
            lines.append(f"{name:<{width}}  " + "  ".join(f"{v:>{cw}}" for v in row))
        if self.undefined:
            lines.append("")
            lines.append("undefined (zero denominator, scored 0): " + ", ".join(self.classes[i] for i in self.undefined))
        return "\n".join(lines) + "\n"
