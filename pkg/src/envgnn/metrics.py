"""Classification metrics: accuracy and ROC-AUC.

ROC-AUC is computed from average ranks, which equals the probability that
a uniformly chosen positive outscores a uniformly chosen negative with
ties counted one half. The multiclass variant is macro one-vs-rest over
the classes present on both sides; classes with a degenerate split are
skipped, and an entirely degenerate input is an error.
"""

from __future__ import annotations

import numpy as np

from .errors import MetricError, ShapeError


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of matching entries between two equal-length label vectors."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape or predicted.ndim != 1:
        raise ShapeError(
            f"predicted and labels must be equal-length vectors, got "
            f"{predicted.shape} and {labels.shape}"
        )
    if labels.size == 0:
        raise MetricError("cannot score an empty label vector")
    return float(np.mean(predicted == labels))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Binary ROC-AUC of ``scores`` against 0/1 ``labels``.

    Equals the tie-aware pairwise probability P(score_pos > score_neg) +
    0.5 P(score_pos = score_neg), computed via the rank-sum identity.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(
            f"scores and labels must be equal-length vectors, got "
            f"{scores.shape} and {labels.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise MetricError("scores contain non-finite values")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_roc_auc(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Macro one-vs-rest ROC-AUC from an [n, C] class-probability matrix.

    With C = 2 this equals the binary roc_auc on column 1. Classes absent
    from ``labels`` or covering all of it are skipped; if every class is
    degenerate a MetricError is raised.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if probabilities.ndim != 2 or probabilities.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"probabilities must be [n, C] aligned with labels, got "
            f"{probabilities.shape} and {labels.shape}"
        )
    values = []
    for c in range(probabilities.shape[1]):
        one_vs_rest = (labels == c).astype(np.int64)
        if one_vs_rest.min() == one_vs_rest.max():
            continue
        values.append(roc_auc(probabilities[:, c], one_vs_rest))
    if not values:
        raise MetricError("no class has both members and non-members")
    return float(np.mean(values))
