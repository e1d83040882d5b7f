"""Shared helpers for the test suite."""

import numpy as np

from multirange.tensor import ParameterStore, Rng, Tape, Tensor


def fd_check(build_loss, store, h=1e-5, max_coords=32, seed=0):
    """Max rel. error between tape gradients and central differences."""
    store.zero_grads()
    with Tape() as tape:
        tape.backward(build_loss())
    picker = np.random.Generator(np.random.Philox(key=seed))
    worst = 0.0
    for _name, p in store.trainable_items():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        k = flat.size
        idxs = np.arange(k) if k <= max_coords else \
            np.sort(picker.permutation(k)[:max_coords])
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = build_loss().item()
            flat[i] = orig - h
            fm = build_loss().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            worst = max(worst, abs(grad[i] - fd) / max(abs(grad[i]) + abs(fd), 1e-8))
    return worst


def t(values, dtype=np.float64):
    return Tensor(np.asarray(values, dtype=dtype))


def rand_param(store: ParameterStore, rng: Rng, name, shape, scale=1.0):
    return store.add(name, rng.normal(shape) * scale)
