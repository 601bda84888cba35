"""Layers with hand-derived forward/backward passes.

Activations are channels-last: ``(N, H, W, C)`` for feature maps and
``(N, F)`` for vectors. Every layer caches what its backward pass needs during
``forward`` and raises :class:`StateError` if ``backward`` is called without a
matching forward.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError, StateError
from . import _kernels as _k
from .spec import LayerKind, LayerSpec

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable arrays that must be persisted (running statistics)."""
        return {}

    def load_state(self, state):
        pass


def _same_pads(k):
    # even kernels put the extra row/column after the data (TensorFlow convention)
    before = (k - 1) // 2
    return before, k - 1 - before


def im2col(x, kh, kw):
    """Patches of a same-padded input, shape ``(N, H, W, kh, kw, C)``."""
    n, h, w, c = x.shape
    (pt, pb), (pl, pr) = _same_pads(kh), _same_pads(kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = np.empty((n, h, w, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols


def col2im(cols, kh, kw):
    """Adjoint of :func:`im2col`: scatter-add patches back to input positions."""
    n, h, w, _, _, c = cols.shape
    (pt, pb), (pl, pr) = _same_pads(kh), _same_pads(kw)
    xp = np.zeros((n, h + pt + pb, w + pl + pr, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return xp[:, pt:pt + h, pl:pl + w, :]


class Conv2D(Layer):
    """Stride-1 "same" cross-correlation; weights are ``kh x kw x Cin x Cout``."""

    name = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, rng, dtype=np.float32):
        super().__init__()
        kh, kw = kernel
        fan_in = kh * kw * in_channels
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, (kh, kw, in_channels, out_channels)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.kernel = (kh, kw)
        # the network clears this on its first layer, whose input is data
        self.needs_input_grad = True

    def forward(self, x, training=False):
        w = self.params["weight"]
        kh, kw, cin, cout = w.shape
        if x.ndim != 4 or x.shape[-1] != cin:
            raise ShapeError(f"conv2d expects (N, H, W, {cin}) input, got {x.shape}")
        cols = im2col(x, kh, kw)
        n, h, wd = x.shape[:3]
        out = cols.reshape(n * h * wd, -1) @ w.reshape(-1, cout)
        out += self.params["bias"]
        self._cache = cols
        return out.reshape(n, h, wd, cout)

    def backward(self, grad_out):
        cols = self._pop_cache()
        w = self.params["weight"]
        kh, kw, cin, cout = w.shape
        g = grad_out.reshape(-1, cout)
        flat = cols.reshape(g.shape[0], -1)
        self.grads["weight"] = (flat.T @ g).reshape(w.shape)
        self.grads["bias"] = g.sum(axis=0, dtype=np.float64).astype(w.dtype)
        if not self.needs_input_grad:
            return None
        gcols = (g @ w.reshape(-1, cout).T).reshape(cols.shape)
        return col2im(gcols, kh, kw)


class Dense(Layer):
    name = "dense"

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        bound = np.sqrt(6.0 / in_features)
        self.params["weight"] = rng.uniform(-bound, bound, (in_features, out_features)).astype(dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, training=False):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"dense expects (N, {w.shape[0]}) input, got {x.shape}")
        self._cache = x
        return x @ w + self.params["bias"]

    def backward(self, grad_out):
        x = self._pop_cache()
        w = self.params["weight"]
        self.grads["weight"] = x.T @ grad_out
        self.grads["bias"] = grad_out.sum(axis=0, dtype=np.float64).astype(w.dtype)
        return grad_out @ w.T


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training=False):
        x = np.ascontiguousarray(x)
        out = np.empty_like(x)
        mask = np.empty(x.shape, dtype=np.bool_)
        _k.relu_forward(x, out, mask)
        self._cache = mask
        return out

    def backward(self, grad_out):
        mask = self._pop_cache()
        grad_out = np.ascontiguousarray(grad_out)
        out = np.empty_like(grad_out)
        _k.relu_backward(grad_out, mask, out)
        return out


class BatchNorm(Layer):
    """Per-channel normalisation over every axis except the last.

    Batch statistics are accumulated in float64. Running statistics follow
    ``running = momentum * running + (1 - momentum) * batch`` with the biased
    batch variance.
    """

    name = "batchnorm"

    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False

    def forward(self, x, training=False):
        gamma, beta = self.params["gamma"], self.params["beta"]
        c = gamma.shape[0]
        if x.shape[-1] != c:
            raise ShapeError(f"batchnorm over {c} channels got input {x.shape}")
        x2 = np.ascontiguousarray(x).reshape(-1, c)
        if training:
            mean, var = _k.channel_moments(x2)
            m = BN_MOMENTUM
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(gamma.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(gamma.dtype)
            self.initialized = True
        else:
            if not self.initialized:
                raise StateError("batchnorm: eval mode requested before running statistics exist")
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = np.empty_like(x2)
        out = np.empty_like(x2)
        _k.bn_normalize(x2, mean, inv_std, gamma.astype(np.float64), beta.astype(np.float64), xhat, out)
        self._cache = (xhat, inv_std, training, x.shape)
        return out.reshape(x.shape)

    def backward(self, grad_out):
        xhat, inv_std, training, shape = self._pop_cache()
        gamma = self.params["gamma"]
        c = gamma.shape[0]
        g = np.ascontiguousarray(grad_out).reshape(-1, c)
        sg, sgx = _k.bn_grad_sums(g, xhat)
        self.grads["gamma"] = sgx.astype(gamma.dtype)
        self.grads["beta"] = sg.astype(gamma.dtype)
        if not training:
            return (g * (gamma * inv_std).astype(g.dtype)).reshape(shape)
        m = g.shape[0]
        scale = gamma.astype(np.float64) * inv_std / m
        out = np.empty_like(g)
        _k.bn_train_backward(g, xhat, scale, sg, sgx, out)
        return out.reshape(shape)

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_state(self, state):
        self.running_mean = np.asarray(state["running_mean"], dtype=self.params["gamma"].dtype).copy()
        self.running_var = np.asarray(state["running_var"], dtype=self.params["gamma"].dtype).copy()
        self.initialized = True


class AvgPool(Layer):
    name = "avgpool"

    def __init__(self, pool):
        super().__init__()
        self.pool = tuple(pool)

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        ph, pw = self.pool
        if h % ph or w % pw:
            raise ShapeError(f"pool {self.pool} does not divide spatial extent {(h, w)}")
        out = np.empty((n, h // ph, w // pw, c), dtype=x.dtype)
        _k.avgpool_forward(np.ascontiguousarray(x), ph, pw, out)
        self._cache = x.shape
        return out

    def backward(self, grad_out):
        shape = self._pop_cache()
        out = np.empty(shape, dtype=grad_out.dtype)
        _k.avgpool_backward(np.ascontiguousarray(grad_out), *self.pool, out)
        return out


class GlobalAvgPool(Layer):
    name = "globalavgpool"

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeError(f"global average pooling expects (N, H, W, C), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(1, 2), dtype=np.float64).astype(x.dtype)

    def backward(self, grad_out):
        n, h, w, c = self._pop_cache()
        g = grad_out / (h * w)
        return np.broadcast_to(g[:, None, None, :], (n, h, w, c)).copy()


class Dropout(Layer):
    """Inverted dropout. ``rng`` is the network's dedicated dropout stream."""

    name = "dropout"

    def __init__(self, rate, rng):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None if not training else 1.0
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape, dtype=np.float32) < keep).astype(x.dtype) / x.dtype.type(keep)
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        if self._cache is None:
            # eval-mode forward is the identity
            return grad_out
        mask, self._cache = self._cache, None
        return grad_out * mask


class Softmax(Layer):
    name = "softmax"

    def forward(self, x, training=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, grad_out):
        p = self._pop_cache()
        return p * (grad_out - (grad_out * p).sum(axis=1, keepdims=True))


class Residual(Layer):
    """``y = x + body(x)``; the body must preserve shape."""

    name = "residual"

    def __init__(self, body):
        super().__init__()
        self.body = list(body)
        for i, layer in enumerate(self.body):
            for k, v in layer.params.items():
                self.params[f"{i}.{k}"] = v

    def forward(self, x, training=False):
        h = x
        for layer in self.body:
            h = layer.forward(h, training)
        self._cache = True
        return x + h

    def backward(self, grad_out):
        self._pop_cache()
        g = grad_out
        for layer in reversed(self.body):
            g = layer.backward(g)
        for i, layer in enumerate(self.body):
            for k, v in layer.grads.items():
                self.grads[f"{i}.{k}"] = v
        return grad_out + g

    def state(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.body) for k, v in layer.state().items()}

    def load_state(self, state):
        for i, layer in enumerate(self.body):
            prefix = f"{i}."
            sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
            if sub:
                layer.load_state(sub)


def build_layer(spec: LayerSpec, in_shape, rng, dropout_rng, dtype=np.float32) -> Layer:
    kind = spec.kind
    if kind is LayerKind.CONV2D:
        return Conv2D(in_shape[-1], spec.units, spec.kernel, rng, dtype)
    if kind is LayerKind.DENSE:
        return Dense(in_shape[-1], spec.units, rng, dtype)
    if kind is LayerKind.BATCHNORM:
        return BatchNorm(in_shape[-1], dtype)
    if kind is LayerKind.RELU:
        return ReLU()
    if kind is LayerKind.AVGPOOL:
        return AvgPool(spec.pool)
    if kind is LayerKind.GLOBALAVGPOOL:
        return GlobalAvgPool()
    if kind is LayerKind.DROPOUT:
        return Dropout(spec.rate, dropout_rng)
    if kind is LayerKind.SOFTMAX:
        return Softmax()
    if kind is LayerKind.RESIDUAL:
        from .spec import output_shape

        body, shape = [], tuple(in_shape)
        for sub in spec.body:
            body.append(build_layer(sub, shape, rng, dropout_rng, dtype))
            shape = output_shape(sub, shape)
        return Residual(body)
    raise ValueError(f"unknown layer kind {kind}")
