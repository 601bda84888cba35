from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError, SpecMismatchError
from .layers import build_layer
from .spec import output_shape


def seed_streams(seed, n=4):
    """Independent generators derived from one seed.

    Order: weight init, dropout masks, batch shuffling, mixup pairing/lambda.
    Keeping them separate means enabling mixup or dropout never shifts the
    random numbers seen by the other consumers.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class Network:
    """Executable sequential network built from a model spec.

    ``spec`` needs ``layers``, ``input_shape`` and ``embedding_layer_index``
    (index of the 64-unit dense layer whose ReLU output is the embedding tap).
    """

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        init_rng, self.dropout_rng, _, _ = seed_streams(seed)
        self.layers = []
        self.layer_names = []
        shape = tuple(spec.input_shape)
        for i, ls in enumerate(spec.layers):
            layer = build_layer(ls, shape, init_rng, self.dropout_rng, self.dtype)
            self.layers.append(layer)
            self.layer_names.append(f"{i:02d}_{layer.name}")
            shape = output_shape(ls, shape)
        self.output_shape = shape
        if hasattr(self.layers[0], "needs_input_grad"):
            self.layers[0].needs_input_grad = False
        idx = spec.embedding_layer_index
        self.tap_index = None if idx is None else idx + 1

    # -- parameters --------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{name}/{k}": v
            for name, layer in zip(self.layer_names, self.layers)
            for k, v in layer.params.items()
        }

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            f"{name}/{k}": layer.grads[k]
            for name, layer in zip(self.layer_names, self.layers)
            for k in layer.params
        }

    def buffers(self) -> dict[str, np.ndarray]:
        return {
            f"{name}/{k}": v
            for name, layer in zip(self.layer_names, self.layers)
            for k, v in layer.state().items()
        }

    def load_arrays(self, params: dict, buffers: dict):
        """Copy arrays into the live parameters (in place, keeps aliases valid)."""
        own = self.parameters()
        for key, target in own.items():
            if key not in params:
                raise SpecMismatchError(f"missing parameter blob {key!r}")
            src = np.asarray(params[key])
            if src.shape != target.shape:
                raise SpecMismatchError(f"layer {key!r}: blob shape {src.shape} != expected {target.shape}")
            target[...] = src
        for name, layer in zip(self.layer_names, self.layers):
            prefix = name + "/"
            state = {k[len(prefix):]: v for k, v in buffers.items() if k.startswith(prefix)}
            if state:
                layer.load_state(state)

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- passes --------------------------------------------------------------
    def forward(self, x, training=False, return_tap=False):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(f"network expects (N, {self.spec.input_shape}) input, got {x.shape}")
        tap = None
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training)
            if i == self.tap_index:
                tap = x
        if return_tap:
            return x, tap
        return x

    def backward(self, grad_out, tap_grad=None):
        """Backpropagate; ``tap_grad`` is added at the embedding tap output.

        Returns the input gradient, or None when the first layer skips it.
        """
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            if tap_grad is not None and i == self.tap_index:
                g = g + tap_grad
            g = self.layers[i].backward(g)
        return g

    def predict_proba(self, x, batch_size=64):
        return self._batched(x, batch_size, tap=False)

    def embed(self, x, batch_size=64):
        return self._batched(x, batch_size, tap=True)

    def _batched(self, x, batch_size, tap):
        out = []
        for s in range(0, len(x), batch_size):
            probs, emb = self.forward(x[s:s + batch_size], training=False, return_tap=True)
            out.append(emb if tap else probs)
            for layer in self.layers:
                layer._cache = None
        return np.concatenate(out, axis=0) if out else np.zeros((0,) + self.output_shape, self.dtype)
