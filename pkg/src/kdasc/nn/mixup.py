from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ValidationError


@dataclass
class MixupPair:
    lam: float
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray


def mixup(pair: MixupPair):
    """Convex combination of two inputs and their target vectors."""
    lam = pair.lam
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"mixup lambda must lie in [0, 1], got {lam}")
    x = lam * pair.x1 + (1.0 - lam) * pair.x2
    y = lam * pair.y1 + (1.0 - lam) * pair.y2
    return x.astype(pair.x1.dtype, copy=False), y


def mix_batch(x, y, rng, alpha, fixed_lambda=None):
    """Mix every sample with a partner from a seeded shuffle of the batch.

    One lambda per pair, drawn from Beta(alpha, alpha) unless ``fixed_lambda``
    is given.
    """
    n = x.shape[0]
    partner = rng.permutation(n)
    if fixed_lambda is None:
        lam = rng.beta(alpha, alpha, size=n)
    else:
        lam = np.full(n, float(fixed_lambda))
    if np.any((lam < 0) | (lam > 1)):
        raise ValidationError("mixup lambda must lie in [0, 1]")
    lx = lam.reshape((n,) + (1,) * (x.ndim - 1)).astype(x.dtype)
    ly = lam[:, None]
    xm = lx * x + (1 - lx) * x[partner]
    ym = ly * y + (1 - ly) * y[partner]
    return xm, ym
