"""Binary classification metrics from the confusion matrix."""

from __future__ import annotations

import math

import numpy as np

from .errors import LengthMismatch, NonBinary


def _check(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise LengthMismatch(f"y_true {y_true.shape} vs y_pred {y_pred.shape}")
    for y in (y_true, y_pred):
        if y.size and not np.isin(y, (0, 1)).all():
            raise NonBinary("labels must be 0 or 1")
    return y_true.astype(np.int64), y_pred.astype(np.int64)


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """(tp, fn, tn, fp) with 1 as the positive class."""
    t, p = _check(y_true, y_pred)
    tp = int(np.sum((t == 1) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    tn = int(np.sum((t == 0) & (p == 0)))
    fp = int(np.sum((t == 0) & (p == 1)))
    return tp, fn, tn, fp


def balanced_accuracy(y_true, y_pred) -> float:
    """Mean recall over the classes present in ``y_true``."""
    tp, fn, tn, fp = confusion(y_true, y_pred)
    recalls = [tp / (tp + fn)] if tp + fn else []
    if tn + fp:
        recalls.append(tn / (tn + fp))
    if not recalls:
        raise LengthMismatch("empty label vectors")
    return float(sum(recalls) / len(recalls))


def mcc(y_true, y_pred) -> float:
    tp, fn, tn, fp = confusion(y_true, y_pred)
    factors = (tp + fp, tp + fn, tn + fp, tn + fn)
    if 0 in factors:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(math.prod(factors)))


def f1(y_true, y_pred) -> float:
    tp, fn, tn, fp = confusion(y_true, y_pred)
    den = 2 * tp + fp + fn
    return 0.0 if den == 0 else 2 * tp / den


def metrics(y_true, y_pred) -> tuple[float, float, float]:
    """(balanced accuracy, MCC, F1)."""
    return balanced_accuracy(y_true, y_pred), mcc(y_true, y_pred), f1(y_true, y_pred)
