"""Micro-averaged community metrics: counts pooled over all queries first."""

from __future__ import annotations

import numpy as np


def _check_pairs(predicted, truth):
    if len(predicted) != len(truth):
        raise ValueError("prediction and truth lists differ in length")
    for z, y in zip(predicted, truth):
        if np.shape(z) != np.shape(y):
            raise ValueError("prediction and truth vectors differ in shape")


def micro_precision_recall_f1(predicted, truth) -> tuple[float, float, float]:
    """Pooled precision, recall, and F1 over 0/1 vectors; 0/0 counts as 0."""
    _check_pairs(predicted, truth)
    tp = pred_total = true_total = 0
    for z, y in zip(predicted, truth):
        z = np.asarray(z, dtype=bool)
        y = np.asarray(y, dtype=bool)
        tp += int((z & y).sum())
        pred_total += int(z.sum())
        true_total += int(y.sum())
    pre = tp / pred_total if pred_total else 0.0
    rec = tp / true_total if true_total else 0.0
    f1 = 2 * pre * rec / (pre + rec) if (pre + rec) else 0.0
    return pre, rec, f1


def micro_jaccard(predicted, truth) -> float:
    """Pooled intersection over pooled union; 0/0 counts as 0."""
    _check_pairs(predicted, truth)
    inter = union = 0
    for z, y in zip(predicted, truth):
        z = np.asarray(z, dtype=bool)
        y = np.asarray(y, dtype=bool)
        inter += int((z & y).sum())
        union += int((z | y).sum())
    return inter / union if union else 0.0
