"""Classification metrics: accuracy, ROC curves, and AUC.

AUC is computed two independent ways: the trapezoid rule over the ROC
staircase (production) and the Mann-Whitney pairwise statistic (oracle).
Tied scores are grouped into a single threshold step, which makes the two
agree exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import UsageError


def accuracy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label; ties break toward
    the smaller class index."""
    probabilities = np.asarray(probabilities)
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim != 2 or probabilities.shape[0] != labels.shape[0]:
        raise UsageError(
            f"probabilities {probabilities.shape} do not align with {labels.shape[0]} labels"
        )
    if labels.shape[0] == 0:
        raise UsageError("accuracy needs at least one sample")
    predictions = np.argmax(probabilities, axis=1)
    return float((predictions == labels).mean())


@dataclass(frozen=True)
class RocCurve:
    """Staircase of (threshold, fpr, tpr) from threshold +inf down, plus the
    trapezoidal area under it."""

    points: Tuple[Tuple[float, float, float], ...]
    auc: float

    def fpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def tpr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def _check_binary(labels: np.ndarray) -> Tuple[int, int]:
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives + negatives != labels.size:
        raise UsageError("labels must be binary (0/1)")
    if positives == 0 or negatives == 0:
        raise UsageError("ROC undefined: both classes must be present")
    return positives, negatives


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Threshold sweep over distinct score values, descending.

    A sample is called positive when score >= threshold.  Equal scores
    collapse into one step, so the trapezoid AUC equals the pairwise
    Mann-Whitney statistic (ties counting one half).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise UsageError("scores and labels must be equal-length vectors")
    positives, negatives = _check_binary(labels)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    points: List[Tuple[float, float, float]] = [(np.inf, 0.0, 0.0)]
    auc = 0.0
    tp = fp = 0
    prev_fpr = prev_tpr = 0.0
    i = 0
    n = scores.size
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            tp += int(sorted_labels[j] == 1)
            fp += int(sorted_labels[j] == 0)
            j += 1
        fpr = fp / negatives
        tpr = tp / positives
        points.append((float(sorted_scores[i]), fpr, tpr))
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        prev_fpr, prev_tpr = fpr, tpr
        i = j
    return RocCurve(tuple(points), auc)


def auc_from_pairs(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Independent O(P*N) oracle: fraction of positive/negative pairs ranked
    correctly, ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_binary(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def write_roc_csv(path, curve: RocCurve) -> None:
    """Export `threshold,fpr,tpr` rows at full float precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for threshold, fpr, tpr in curve.points:
            writer.writerow([repr(float(threshold)), repr(float(fpr)), repr(float(tpr))])
