"""Sequential scan kernels with selectable backend.

Two interchangeable implementations exist: ``jit`` (numba ``@njit``) and
``reference`` (pure numpy). The active one is chosen by the
``MULTIRANGE_KERNELS`` environment flag (``auto``, ``numba`` or ``numpy``;
``auto`` prefers numba when importable) and can be overridden at runtime with
``set_backend`` (used by tests and ``bench --kernels``).
"""

from __future__ import annotations

import os

from . import reference
from .reference import COUNTERS, counters, reset_counters

ENV_FLAG = "MULTIRANGE_KERNELS"

try:
    from . import jit as _jit
    HAS_NUMBA = True
except ImportError:
    _jit = None
    HAS_NUMBA = False

_BACKENDS = {"numpy": reference}
if HAS_NUMBA:
    _BACKENDS["numba"] = _jit


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _resolve(name: str):
    if name == "auto":
        name = "numba" if HAS_NUMBA else "numpy"
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()} (or 'auto')"
        )
    return name


_active = _resolve(os.environ.get(ENV_FLAG, "auto"))


def set_backend(name: str) -> str:
    """Select the scan-kernel backend; returns the previous backend name."""
    global _active
    prev = _active
    _active = _resolve(name)
    return prev


def get_backend() -> str:
    return _active


class use_backend:
    """Context manager for a temporary backend selection."""

    def __init__(self, name: str):
        self.name = name
        self._prev = None

    def __enter__(self):
        self._prev = set_backend(self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        set_backend(self._prev)
        return False


def mru_scan_forward(g, z, c0):
    return _BACKENDS[_active].mru_scan_forward(g, z, c0)


def mru_scan_backward(g, z, c0, c, dc):
    return _BACKENDS[_active].mru_scan_backward(g, z, c0, c, dc)


def lstm_scan_forward(xp, w_hh, h0, c0):
    return _BACKENDS[_active].lstm_scan_forward(xp, w_hh, h0, c0)


def lstm_scan_backward(w_hh, h0, c0, cs, gates, dh):
    return _BACKENDS[_active].lstm_scan_backward(w_hh, h0, c0, cs, gates, dh)


def gru_scan_forward(xp, w_hh, h0):
    return _BACKENDS[_active].gru_scan_forward(xp, w_hh, h0)


def gru_scan_backward(w_hh, h0, saved, hs, dh):
    return _BACKENDS[_active].gru_scan_backward(w_hh, h0, saved, hs, dh)
