"""Loss functions returning ``(value, gradient)`` pairs."""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError, ValidationError

PROB_FLOOR = 1e-12


def cross_entropy(pred, target):
    """Mean over the batch of ``-sum_c target_c * log(pred_c)``.

    ``pred`` holds probabilities (softmax output), clamped below at 1e-12.
    ``target`` may be one-hot or a mixup convex combination but must lie on
    the simplex. Returns the loss and its gradient with respect to ``pred``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"cross_entropy needs equal (N, C) shapes, got {pred.shape} and {target.shape}")
    if np.any(target < -1e-6) or np.any(np.abs(target.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("cross_entropy targets must lie on the probability simplex")
    n = pred.shape[0]
    clamped = np.maximum(pred, PROB_FLOOR)
    value = float(-(target * np.log(clamped.astype(np.float64))).sum() / n)
    grad = (-target / clamped / n).astype(pred.dtype)
    return value, grad


def mse(pred, target):
    """Mean over batch and dimensions of the squared difference."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse needs equal shapes, got {pred.shape} and {target.shape}")
    diff = pred - target.astype(pred.dtype)
    value = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = (2.0 / diff.size) * diff
    return value, grad.astype(pred.dtype)
