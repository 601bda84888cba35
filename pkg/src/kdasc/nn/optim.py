from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import TrainingAborted


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction. Parameters are updated in place.

    Moments are held in float64 so the float32 parameter trajectory does not
    depend on accumulated rounding in the optimizer state.
    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, params: dict, grads: dict):
        st = self.state
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingAborted("non-finite gradient", layer=name, step=st.step + 1)
        st.step += 1
        t = st.step
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**t
        corr2 = 1.0 - b2**t
        for name, p in params.items():
            g = grads[name].astype(np.float64)
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros(p.shape)
                st.v[name] = np.zeros(p.shape)
            v = st.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            p -= update.astype(p.dtype)


def adam_step(params, grads, state: AdamState, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional form of one Adam update; returns the (mutated) state."""
    opt = Adam(learning_rate, beta1, beta2, eps)
    opt.state = state
    opt.step(params, grads)
    return opt.state
