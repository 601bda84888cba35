"""Shared fixtures-as-functions for the test modules."""

from __future__ import annotations

import numpy as np

from kdasc.nn import gradcheck
from kdasc.nn.layers import (
    AvgPool,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    ReLU,
    Residual,
    Softmax,
)
from kdasc.nn.losses import cross_entropy, mse

F64 = np.float64


def _away_from_zero(rng, shape, margin=0.05):
    return np.sign(rng.standard_normal(shape)) * rng.uniform(margin, 1.0, shape)


def _conv(kh, kw, cout):
    def make(shape, rng):
        return Conv2D(shape[-1], cout, (kh, kw), rng, F64), rng.standard_normal(shape), {}
    return make


def _dense(units):
    def make(shape, rng):
        return Dense(shape[-1], units, rng, F64), rng.standard_normal(shape), {}
    return make


def _relu(shape, rng):
    return ReLU(), _away_from_zero(rng, shape), {}


def _bn(training):
    def make(shape, rng):
        layer = BatchNorm(shape[-1], F64)
        layer.params["gamma"][...] = rng.uniform(0.5, 1.5, shape[-1])
        layer.params["beta"][...] = rng.standard_normal(shape[-1])
        if not training:
            layer.load_state({"running_mean": rng.standard_normal(shape[-1]), "running_var": rng.uniform(0.5, 2, shape[-1])})
        return layer, 2.0 * rng.standard_normal(shape) + 0.5, {"training": training}
    return make


def _pool(ph, pw):
    def make(shape, rng):
        return AvgPool((ph, pw)), rng.standard_normal(shape), {}
    return make


def _gap(shape, rng):
    return GlobalAvgPool(), rng.standard_normal(shape), {}


def _dropout(rate):
    def make(shape, rng):
        layer = Dropout(rate, None)

        def replay():
            layer.rng = np.random.default_rng(1234)

        return layer, rng.standard_normal(shape), {"before_forward": replay}
    return make


def _softmax(shape, rng):
    return Softmax(), 2.0 * rng.standard_normal(shape), {}


def _residual(kh, kw):
    def make(shape, rng):
        c = shape[-1]
        body = [Conv2D(c, c, (kh, kw), rng, F64), BatchNorm(c, F64)]
        return Residual(body), rng.standard_normal(shape), {}
    return make


# (name, factory, three input shapes)
LAYER_CASES = [
    ("conv2d_2x2", _conv(2, 2, 3), [(2, 4, 4, 1), (1, 5, 3, 2), (2, 3, 6, 3)]),
    ("conv2d_3x3", _conv(3, 3, 2), [(1, 5, 5, 2), (2, 4, 3, 1), (1, 6, 4, 3)]),
    ("conv2d_1x3", _conv(1, 3, 4), [(1, 3, 5, 2), (2, 2, 4, 1), (1, 4, 4, 3)]),
    ("dense", _dense(5), [(3, 4), (1, 7), (5, 2)]),
    ("relu", _relu, [(2, 3, 3, 2), (4, 6), (1, 5, 2, 3)]),
    ("batchnorm_train", _bn(True), [(4, 3, 3, 2), (6, 3), (2, 4, 2, 4)]),
    ("batchnorm_eval", _bn(False), [(2, 3, 3, 2), (5, 4), (1, 2, 4, 3)]),
    ("avgpool_2x2", _pool(2, 2), [(2, 4, 4, 2), (1, 6, 2, 3), (3, 2, 8, 1)]),
    ("globalavgpool", _gap, [(2, 3, 3, 2), (1, 4, 2, 5), (3, 2, 2, 1)]),
    ("dropout", _dropout(0.3), [(4, 5), (2, 3, 3, 2), (1, 16)]),
    ("softmax", _softmax, [(3, 10), (1, 4), (5, 7)]),
    ("residual", _residual(3, 3), [(2, 4, 4, 2), (3, 3, 3, 1), (2, 2, 5, 3)]),
]


def _ce_case(shape, rng):
    # central differences of log(p) carry a relative truncation error of about
    # step**2 / (3 p**2), so predictions are kept >= 0.2 for a 1e-4 check
    pred = rng.uniform(0.2, 1.0, shape)
    target = rng.dirichlet(np.ones(shape[1]), size=shape[0])
    return pred, target


def softmax_cross_entropy(logits, target):
    """Cross-entropy of softmax(logits), gradient w.r.t. the logits via both backward passes."""
    sm = Softmax()
    p = sm.forward(logits)
    value, g = cross_entropy(p, target)
    return value, sm.backward(g)


def _logit_case(shape, rng):
    return 3.0 * rng.standard_normal(shape), rng.dirichlet(np.ones(shape[1]), size=shape[0])


def _mse_case(shape, rng):
    return rng.standard_normal(shape), rng.standard_normal(shape)


LOSS_CASES = [
    ("cross_entropy", cross_entropy, _ce_case, [(3, 10), (1, 4), (6, 5)]),
    ("softmax_cross_entropy", softmax_cross_entropy, _logit_case, [(3, 10), (2, 4), (4, 6)]),
    ("mse", mse, _mse_case, [(2, 64), (4, 8), (1, 3)]),
]


def run_gradient_suite(seed=0, n_coords=100, step=1e-3):
    """Yield ``(case name, shape, GradCheckResult)`` for every layer and loss case."""
    rng = np.random.default_rng(seed)
    for name, make, shapes in LAYER_CASES:
        for shape in shapes:
            layer, x, kw = make(shape, rng)
            yield name, shape, gradcheck.check_layer(layer, x, rng, n_coords=n_coords, step=step, **kw)
    for name, fn, make, shapes in LOSS_CASES:
        for shape in shapes:
            pred, target = make(shape, rng)
            yield name, shape, gradcheck.check_loss(fn, pred, target, rng, n_coords=n_coords, step=step)


def naive_conv(x, w, b):
    """Quadruple-loop same-padded cross-correlation (extra padding after the data)."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((n, h, wd, cout))
    for bi in range(n):
        for i in range(h):
            for j in range(wd):
                for o in range(cout):
                    acc = b[o]
                    for di in range(kh):
                        for dj in range(kw):
                            ii, jj = i + di - pt, j + dj - pl
                            if 0 <= ii < h and 0 <= jj < wd:
                                for c in range(cin):
                                    acc += x[bi, ii, jj, c] * w[di, dj, c, o]
                    out[bi, i, j, o] = acc
    return out


def direct_prod(posteriors):
    """Brute-force PROD fusion: plain running product divided by S."""
    out = np.ones(len(posteriors[0]))
    for p in posteriors:
        for c in range(len(out)):
            out[c] *= p[c]
    return out / len(posteriors)


def run_fusion_oracle(n_instances=10_000, seed=0, n_classes=10):
    """Compare prod_fuse with ``direct_prod`` on random instances.

    Returns ``(max relative error, argmax mismatches against the unscaled product)``.
    """
    from kdasc.fusion import prod_fuse

    rng = np.random.default_rng(seed)
    worst, mismatches = 0.0, 0
    for _ in range(n_instances):
        S = int(rng.integers(1, 6))
        ps = rng.dirichlet(np.full(n_classes, rng.uniform(0.2, 3.0)), size=S)
        res = prod_fuse(list(ps))
        want = direct_prod(ps)
        ok = want > 0
        if ok.any():
            worst = max(worst, float(np.max(np.abs(res.fused[ok] - want[ok]) / want[ok])))
        if res.predicted_label != int(np.argmax(np.prod(ps, axis=0))):
            mismatches += 1
    return worst, mismatches


def resolvable_filters(bank, n_fft=4096, sr=44100):
    """Interior filters whose neighbouring centres are at least two FFT bins away.

    Closer neighbours share the tone's bin, so no argmax can separate them.
    """
    bins = bank.center_frequencies * n_fft / sr
    return [k for k in range(1, len(bins) - 1) if bins[k] - bins[k - 1] >= 2 and bins[k + 1] - bins[k] >= 2]


def tone_argmax_failures(bank, n_fft=4096, sr=44100):
    failures = []
    for k in resolvable_filters(bank, n_fft, sr):
        spec = np.zeros((n_fft // 2 + 1, 1))
        spec[int(round(bank.center_frequencies[k] * n_fft / sr)), 0] = 1.0
        if int(np.argmax(bank.weights @ spec)) != k:
            failures.append(k)
    return failures
