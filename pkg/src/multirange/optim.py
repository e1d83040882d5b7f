"""Adam optimizer over a parameter store, plus inverted dropout."""

from __future__ import annotations

import numpy as np

from .ops import mul
from .tensor import ParameterStore, Rng, Tensor


class AdamState:
    """First/second moment buffers keyed by parameter name, shared step count."""

    def __init__(self):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(store: ParameterStore, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every trainable parameter.

    Per-coordinate steps are bounded by lr / (1 - beta1); gradients are
    zeroed after the update.
    """
    state.t += 1
    t = state.t
    bound = lr / (1.0 - beta1)
    for name, p in store.trainable_items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data, dtype=np.float64)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data, dtype=np.float64)
        g64 = g.astype(np.float64, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g64
        v *= beta2
        v += (1.0 - beta2) * np.square(g64)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        np.clip(update, -bound, bound, out=update)
        p.data -= update.astype(p.data.dtype)
        g[...] = 0.0


class Adam:
    def __init__(self, store: ParameterStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.store, self.state, self.lr, self.beta1, self.beta2, self.eps)


def dropout(x: Tensor, rate: float, rng: Rng, training: bool) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-rate) during
    training so inference needs no rescaling."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= rate).astype(x.data.dtype)
    keep /= np.asarray(1.0 - rate, dtype=x.data.dtype)
    return mul(x, keep)
