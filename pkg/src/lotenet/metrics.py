"""Classification metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError, UsageError


@dataclass(frozen=True)
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel()
        if scores.shape != labels.shape:
            raise UsageError(f"{scores.size} scores but {labels.size} labels")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(bool))


def auc_roc(scores, labels=None) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Ties receive midranks, which makes the result equal to the trapezoidal
    ROC area.  Accepts a :class:`ScoredLabels` or two parallel arrays.
    """
    sl = scores if isinstance(scores, ScoredLabels) else ScoredLabels(scores, labels)
    n_pos = int(sl.labels.sum())
    n_neg = sl.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(sl.scores, method="average")
    u = ranks[sl.labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise UsageError(f"{p.size} predictions but {y.size} labels")
    if p.size == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return float(np.mean(p == y))


def confusion(predictions, labels, classes: int | None = None) -> np.ndarray:
    """Counts with true classes on rows and predicted classes on columns."""
    p, y = np.asarray(predictions, dtype=np.intp), np.asarray(labels, dtype=np.intp)
    if p.shape != y.shape:
        raise UsageError(f"{p.size} predictions but {y.size} labels")
    if classes is None:
        classes = int(max(p.max(initial=-1), y.max(initial=-1))) + 1
    out = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(out, (y, p), 1)
    return out
