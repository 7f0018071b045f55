"""Classification metrics and multi-seed aggregation.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix

from .errors import EmptyInputError, InsufficientRunsError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"Confusion counts must be non-negative: {self}")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, predictions, labels):
        """Count binary predictions against binary labels.

        :param Sequence[int] predictions: Predicted 0/1
        :param Sequence[int] labels: True 0/1
        """
        predictions = np.asarray(predictions, dtype=int)
        labels = np.asarray(labels, dtype=int)
        if predictions.shape != labels.shape:
            raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
        if labels.size == 0:
            return cls(0, 0, 0, 0)
        tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[0, 1]).ravel()
        return cls(int(tp), int(fp), int(fn), int(tn))


@dataclass(frozen=True)
class RunSummary:
    """Per-seed values with their mean and sample standard deviation (ddof=1)."""

    values: tuple
    mean: float
    std: float
    ddof: int = 1


def mcc(c):
    """Matthews correlation coefficient; 0 when a marginal of the confusion matrix is empty.

    :param ConfusionCounts c: Counts

    :rtype: float

    :raises EmptyInputError: All counts are zero
    """
    if c.total == 0:
        raise EmptyInputError()
    denominator = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denominator == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denominator)


def accuracy(c):
    """``(tp + tn) / total``.

    :raises EmptyInputError: All counts are zero
    """
    if c.total == 0:
        raise EmptyInputError()
    return (c.tp + c.tn) / c.total


def auc_roc(scores, labels):
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals ``P(score_pos > score_neg) + 0.5 * P(tie)`` over all positive/negative pairs,
    computed from average ranks.

    :param Sequence[float] scores: Scores, higher means more likely positive
    :param Sequence[int] labels: 0/1 labels

    :rtype: float

    :raises UndefinedMetricError: Only one class present
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC", "labels contain a single class")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def summarize_runs(values):
    """Mean and sample standard deviation of per-seed values.

    :param Sequence[float] values: One value per seed

    :rtype: RunSummary

    :raises InsufficientRunsError: Fewer than 2 values
    """
    values = tuple(float(v) for v in values)
    if len(values) < 2:
        raise InsufficientRunsError(len(values))
    return RunSummary(values, float(np.mean(values)), float(np.std(values, ddof=1)))


def evaluate_predictions(probabilities, labels, threshold=0.5):
    """MCC, accuracy and AUC-ROC of probabilities thresholded at ``threshold``.

    AUC-ROC is NaN when the labels hold a single class.

    :rtype: dict[str, float]
    """
    probabilities = np.asarray(probabilities, dtype=float)
    counts = ConfusionCounts.from_predictions((probabilities >= threshold).astype(int), labels)
    try:
        auc = auc_roc(probabilities, labels)
    except UndefinedMetricError:
        auc = float("nan")
    return {"mcc": mcc(counts), "accuracy": accuracy(counts), "auc_roc": auc}
