"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError, ValidationError

N_CLASSES = 10


def as_clip_batch(X):
    """Normalise clip input to ``(list of 1-D float arrays, sample_rate)``."""
    from .dataset import AudioClip  # local: dataset imports frontend constants lazily

    from .frontend import SAMPLE_RATE

    if isinstance(X, AudioClip):
        X = [X]
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], AudioClip):
        rates = {c.sample_rate for c in X}
        if len(rates) != 1:
            raise ValidationError(f"mixed sample rates in batch: {sorted(rates)}")
        return [c.samples for c in X], rates.pop()
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"expected (n_clips, n_samples) audio, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("audio contains non-finite samples")
    return list(arr), SAMPLE_RATE


def check_features(X, input_shape=(128, 128, 3), dtype=np.float32):
    X = check_array(X, allow_nd=True, dtype=None, ensure_all_finite=True)
    X = np.asarray(X, dtype=dtype)
    if X.shape[1:] != tuple(input_shape):
        raise ShapeError(f"expected features of shape (n, {', '.join(map(str, input_shape))}), got {X.shape}")
    return X


def check_labels(y, n_samples, n_classes=N_CLASSES):
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ShapeError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ValidationError("labels must be integer class indices")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    return y


def one_hot(y, n_classes=N_CLASSES):
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def check_posteriors(P, n_classes=None):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or (n_classes is not None and P.shape[1] != n_classes):
        raise ShapeError(f"posteriors must be (n, C), got {P.shape}")
    if np.isnan(P).any():
        raise ValidationError("posteriors contain NaN")
    if (P < 0).any():
        raise ValidationError("posteriors contain negative components")
    return P
