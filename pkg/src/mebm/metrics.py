"""Confusion matrix, macro F1 and macro top-k accuracy."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import N_CLASSES


def _ids(values, n_classes: int, what: str) -> np.ndarray:
    ids = np.asarray(values)
    if ids.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional")
    if ids.size and (ids.min() < 0 or ids.max() >= n_classes):
        raise ValueError(f"{what} contains ids outside [0, {n_classes})")
    return ids.astype(np.int64)


def confusion_matrix(truth, pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows indexed by the true class and columns by the prediction."""
    truth = _ids(truth, n_classes, "truth")
    pred = _ids(pred, n_classes, "pred")
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.size} truths vs {pred.size} predictions")
    flat = np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def per_class_f1(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """F1 of every class and a mask of the classes that count toward the macro mean."""
    tp = np.diag(cm).astype(np.float64)
    true_count = cm.sum(axis=1)
    pred_count = cm.sum(axis=0)
    denom = true_count + pred_count
    # 2PR/(P+R) simplifies to 2TP/(true + predicted); zero when TP is zero.
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return f1, denom > 0


def f1_macro(truth, pred, n_classes: int = N_CLASSES) -> float:
    if len(truth) == 0:
        raise ValueError("f1_macro needs at least one sample")
    f1, present = per_class_f1(confusion_matrix(truth, pred, n_classes))
    return float(f1[present].mean())


def topk_hits(probs: np.ndarray, truth: np.ndarray, k: int) -> np.ndarray:
    """Whether each true label ranks in the top k; ties go to the lower class id."""
    probs = np.asarray(probs, dtype=np.float64)
    true_p = probs[np.arange(len(truth)), truth][:, None]
    ids = np.arange(probs.shape[1])[None, :]
    ahead = (probs > true_p) | ((probs == true_p) & (ids < truth[:, None]))
    return ahead.sum(axis=1) < k


def topk_acc_macro(truth, probs, k: int, n_classes: int = N_CLASSES) -> float:
    probs = np.asarray(probs)
    if probs.ndim != 2 or probs.shape[1] != n_classes:
        raise ValueError(f"probs must have shape (N, {n_classes}), got {probs.shape}")
    if not 1 <= k <= n_classes:
        raise ValueError(f"k must lie in [1, {n_classes}], got {k}")
    truth = _ids(truth, n_classes, "truth")
    if truth.size == 0 or truth.size != probs.shape[0]:
        raise ValueError("truth must be nonempty and match the number of probability rows")
    hits = topk_hits(probs, truth, k).astype(np.float64)
    per_class = [hits[truth == c].mean() for c in np.unique(truth)]
    return float(np.mean(per_class))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    f1_macro: float
    top1: float
    top3: float
    top5: float
    per_class_f1: np.ndarray
    n_samples: int

    @classmethod
    def from_predictions(cls, truth, probs, n_classes: int = N_CLASSES) -> "MetricsReport":
        probs = np.asarray(probs)
        truth = _ids(truth, n_classes, "truth")
        if truth.size == 0:
            raise ValueError("cannot report on an empty evaluation set")
        # argmax picks the lowest id among ties, matching the top-k convention
        pred = probs.argmax(axis=1)
        cm = confusion_matrix(truth, pred, n_classes)
        f1, present = per_class_f1(cm)
        return cls(
            confusion=cm,
            f1_macro=float(f1[present].mean()),
            top1=topk_acc_macro(truth, probs, 1, n_classes),
            top3=topk_acc_macro(truth, probs, 3, n_classes),
            top5=topk_acc_macro(truth, probs, 5, n_classes),
            per_class_f1=f1,
            n_samples=int(truth.size),
        )

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "f1_macro": self.f1_macro,
            "top1_acc_macro": self.top1,
            "top3_acc_macro": self.top3,
            "top5_acc_macro": self.top5,
            "per_class_f1": [float(v) for v in self.per_class_f1],
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self, vocab=None) -> str:
        lines = [
            f"samples        {self.n_samples}",
            f"F1 macro       {100 * self.f1_macro:6.2f}%",
            f"Top-1 macro    {100 * self.top1:6.2f}%",
            f"Top-3 macro    {100 * self.top3:6.2f}%",
            f"Top-5 macro    {100 * self.top5:6.2f}%",
            "",
            f"{'class':<8}{'support':>8}{'F1':>8}",
        ]
        support = self.confusion.sum(axis=1)
        for c, s in enumerate(support.tolist()):
            if s == 0 and self.confusion[:, c].sum() == 0:
                continue
            name = vocab[c] if vocab is not None else str(c)
            lines.append(f"{name:<8}{s:>8}{self.per_class_f1[c]:>8.3f}")
        return "\n".join(lines)
