"""Classification metrics for binary label/score vectors."""

import numpy as np


def _binary_f1(labels, preds, positive):
    tp = int(np.sum((preds == positive) & (labels == positive)))
    fp = int(np.sum((preds == positive) & (labels != positive)))
    fn = int(np.sum((preds != positive) & (labels == positive)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def compute_f1(labels, scores, threshold=0.5, average="macro"):
    """F1 of thresholded scores; macro averages the two per-class F1s."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have the same length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    preds = (scores >= threshold).astype(np.int64)
    if average == "macro":
        return 0.5 * (_binary_f1(labels, preds, 1) + _binary_f1(labels, preds, 0))
    if average == "binary":
        return _binary_f1(labels, preds, 1)
    if average == "micro":
        # Binary micro-F1 equals accuracy.
        return float(np.mean(preds == labels))
    raise ValueError(f"unknown F1 average {average!r}")


def compute_auc(labels, scores):
    """Area under the ROC curve via the rank statistic; tied scores
    contribute half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores must have the same length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one sample of each class")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
