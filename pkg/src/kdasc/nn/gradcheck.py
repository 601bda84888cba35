"""Central-difference gradient checks for layers and losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckResult:
    # worst relative error per checked array ("input" or a parameter name)
    errors: dict[str, float] = field(default_factory=dict)
    n_checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol=1e-4):
        return self.max_error < tol


def relative_error(analytic, numeric, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros from dividing by zero."""
    a, n = float(analytic), float(numeric)
    return abs(a - n) / max(abs(a), abs(n), floor)


def _coords(shape, rng, n_coords):
    size = int(np.prod(shape))
    flat = np.arange(size) if size <= n_coords else rng.choice(size, n_coords, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def check_layer(layer, x, rng, n_coords=100, step=1e-3, training=True, before_forward=None) -> GradCheckResult:
    """Compare ``layer.backward`` with central differences of ``sum(r * layer(x))``.

    ``r`` is a fixed random projection of the output. ``before_forward`` is
    called ahead of every forward pass; dropout uses it to replay one mask.
    """
    x = np.array(x, dtype=np.float64)
    prep = before_forward or (lambda: None)

    def loss():
        prep()
        out = layer.forward(x, training)
        layer._cache = None
        return float(np.sum(out * r))

    prep()
    out = layer.forward(x, training)
    r = rng.standard_normal(out.shape)
    gx = layer.backward(r)
    grads = {k: np.array(v, dtype=np.float64) for k, v in layer.grads.items()}
    targets = {} if gx is None else {"input": (x, gx)}
    targets.update({k: (layer.params[k], grads[k]) for k in layer.params})

    result = GradCheckResult()
    for name, (arr, analytic) in targets.items():
        worst = 0.0
        coords = _coords(arr.shape, rng, n_coords)
        for idx in coords:
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss()
            arr[idx] = orig - step
            down = loss()
            arr[idx] = orig
            worst = max(worst, relative_error(analytic[idx], (up - down) / (2 * step)))
        result.errors[name] = worst
        result.n_checked[name] = len(coords)
    return result


def check_loss(loss_fn, pred, target, rng, n_coords=100, step=1e-3) -> GradCheckResult:
    """Check the gradient returned by a ``(value, grad) = loss_fn(pred, target)`` loss."""
    pred = np.array(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _, grad = loss_fn(pred, target)
    worst = 0.0
    coords = _coords(pred.shape, rng, n_coords)
    for idx in coords:
        orig = pred[idx]
        pred[idx] = orig + step
        up = loss_fn(pred, target)[0]
        pred[idx] = orig - step
        down = loss_fn(pred, target)[0]
        pred[idx] = orig
        worst = max(worst, relative_error(grad[idx], (up - down) / (2 * step)))
    return GradCheckResult({"pred": worst}, {"pred": len(coords)})
