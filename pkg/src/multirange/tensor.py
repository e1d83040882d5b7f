"""Minimal reverse-mode autodiff core.

A ``Tape`` records every differentiable operation in execution order, which is
by construction a topological order (an op can only consume tensors that
already exist). ``backward`` walks the tape once in reverse, accumulating
gradients per node and finally adding into the persistent gradient buffers of
any ``ParameterStore`` entries that participated.

Ops executed while no tape is active run forward-only (inference fast path).
A single tape is single-threaded; independent tapes may live on different
threads (the active-tape stack is thread-local).
"""

from __future__ import annotations

import hashlib
import threading

import numpy as np

DTYPES = {"fp32": np.float32, "fp64": np.float64}


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op contract."""


class MaskError(ValueError):
    """Raised for invalid masks (non-prefix, or fully masked reductions)."""


class Tensor:
    """A numpy array plus an optional position on an autodiff tape.

    ``grad`` is a persistent accumulator array and exists only for leaf
    tensors that want gradients (parameters); intermediate gradients live
    inside ``Tape.backward`` and are discarded afterwards.
    """

    __slots__ = ("data", "tape", "node", "grad", "name")

    def __init__(self, data, tape=None, node=-1, grad=None, name=""):
        self.data = data
        self.tape = tape
        self.node = node
        self.grad = grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"

    # Arithmetic dunders are attached by multirange.ops at import time to
    # avoid a circular import; see the bottom of ops.py.


class _Node:
    __slots__ = ("op", "parents", "backward", "leaf")

    def __init__(self, op, parents, backward, leaf=None):
        self.op = op
        self.parents = parents
        self.backward = backward
        self.leaf = leaf  # leaf Tensor kept alive so grads can be sunk into it


_STATE = threading.local()


def _stack():
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = []
    return _STATE.tapes


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)

    def _leaf_id(self, t: Tensor) -> int:
        if t.tape is self and t.node >= 0:
            return t.node
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None, leaf=t))
            self._leaf_ids[id(t)] = nid
        return nid

    def record(self, op: str, parents, out_data, backward_fn) -> Tensor:
        """Append one op node. ``backward_fn(out_grad)`` must return one
        gradient array (or None) per entry of ``parents``."""
        pids = tuple(self._leaf_id(p) for p in parents)
        nid = len(self.nodes)
        self.nodes.append(_Node(op, pids, backward_fn))
        return Tensor(out_data, tape=self, node=nid)

    def backward(self, loss: Tensor) -> None:
        if loss.tape is not self or loss.node < 0:
            raise ValueError("loss tensor does not belong to this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node] = np.ones_like(loss.data)
        for nid in range(len(self.nodes) - 1, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.backward is not None:
                parts = node.backward(g)
                for pid, pg in zip(node.parents, parts):
                    if pg is None:
                        continue
                    if grads[pid] is None:
                        # Own the buffer: backward fns may hand back views of
                        # saved arrays or the upstream grad itself.
                        grads[pid] = pg.copy() if (pg is g or pg.base is not None) else pg
                    else:
                        grads[pid] += pg
            elif node.leaf is not None and node.leaf.grad is not None:
                node.leaf.grad += g
            grads[nid] = None


def backward(loss: Tensor, store=None) -> None:
    """Run reverse-mode accumulation from a scalar loss into parameter grads.

    ``store`` is accepted for interface symmetry; gradient sinks are the leaf
    tensors recorded on the tape, so parameters off the loss path are simply
    left untouched (zero if the store was zeroed beforehand).
    """
    if loss.tape is None:
        raise ValueError("loss was computed without an active Tape")
    loss.tape.backward(loss)


class ParameterStore:
    """Named parameters with persistent gradient accumulators."""

    def __init__(self, dtype="fp32"):
        if isinstance(dtype, str):
            if dtype not in DTYPES:
                raise ValueError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
            dtype = DTYPES[dtype]
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        value = np.ascontiguousarray(value, dtype=self.dtype)
        grad = np.zeros_like(value) if trainable else None
        t = Tensor(value, grad=grad, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable_items(self):
        return [(n, t) for n, t in self._params.items() if self._trainable[n]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def zero_grads(self) -> None:
        for name, t in self._params.items():
            if t.grad is not None:
                t.grad[...] = 0.0

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter in state: {name}")
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: stored shape {src.shape} != expected {t.data.shape}"
                )
            t.data[...] = src


def _child_seed(seed: int, tag: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Deterministic, splittable random source (counter-based Philox core).

    Identical seeds produce bit-identical draws on any platform; ``split``
    derives an independent named stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, tag: str) -> "Rng":
        return Rng(_child_seed(self.seed, tag))

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float64):
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def normal(self, shape=(), dtype=np.float64):
        return self._gen.standard_normal(size=shape).astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, items: list) -> None:
        order = self._gen.permutation(len(items))
        items[:] = [items[i] for i in order]

    def glorot(self, fan_in: int, fan_out: int, shape=None, dtype=np.float64):
        limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        if shape is None:
            shape = (fan_in, fan_out)
        return self.uniform(shape, -limit, limit, dtype=dtype)
