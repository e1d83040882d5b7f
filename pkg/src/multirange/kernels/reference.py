"""Pure-numpy sequential scan kernels (fallback backend).

Every kernel here has a mirror in ``multirange.kernels.jit``. The loops stay
deliberately simple: one python iteration per timestep, vectorized inside the
step. This backend also carries the instrumentation counters that verify the
structural claim of the recurrent gated cell: its loop performs no matrix
products and O(d) elementwise work per step, versus one (h x G*h) matmul per
step for the recurrent baselines.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

# Counters over work executed *inside* sequential loops.
COUNTERS = {"seq_matmul_calls": 0, "seq_matmul_flops": 0, "seq_elementwise_flops": 0}


def reset_counters() -> None:
    for k in COUNTERS:
        COUNTERS[k] = 0


def counters() -> dict:
    return dict(COUNTERS)


def _dot(vec: np.ndarray, mat: np.ndarray) -> np.ndarray:
    COUNTERS["seq_matmul_calls"] += 1
    COUNTERS["seq_matmul_flops"] += 2 * mat.shape[0] * mat.shape[1]
    return vec @ mat


def _ew(n: int) -> None:
    COUNTERS["seq_elementwise_flops"] += n


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Gated accumulator scan: c_t = g_t * c_{t-1} + (1 - g_t) * z_t
# ---------------------------------------------------------------------------

def mru_scan_forward(g: np.ndarray, z: np.ndarray, c0: np.ndarray) -> np.ndarray:
    ell, d = g.shape
    c = np.empty_like(g)
    prev = c0
    for t in range(ell):
        c[t] = g[t] * prev + (1.0 - g[t]) * z[t]
        _ew(4 * d)
        prev = c[t]
    return c


def mru_scan_backward(g, z, c0, c, dc):
    ell, d = g.shape
    dg = np.empty_like(g)
    dz = np.empty_like(g)
    run = np.zeros_like(c0)
    for t in range(ell - 1, -1, -1):
        tot = dc[t] + run
        prev = c[t - 1] if t > 0 else c0
        dg[t] = tot * (prev - z[t])
        dz[t] = tot * (1.0 - g[t])
        run = tot * g[t]
        _ew(7 * d)
    return dg, dz, run


# ---------------------------------------------------------------------------
# LSTM scan. xp holds the hoisted input projections (ell x 4h), gate order
# [i, f, g, o]. Returns outputs plus saved activations for backward.
# ---------------------------------------------------------------------------

def lstm_scan_forward(xp: np.ndarray, w_hh: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    ell = xp.shape[0]
    h = h0.shape[0]
    gates = np.empty((ell, 4 * h), dtype=xp.dtype)
    cs = np.empty((ell, h), dtype=xp.dtype)
    hs = np.empty((ell, h), dtype=xp.dtype)
    hprev, cprev = h0, c0
    for t in range(ell):
        a = xp[t] + _dot(hprev, w_hh)
        i = _sigmoid(a[:h])
        f = _sigmoid(a[h:2 * h])
        gg = np.tanh(a[2 * h:3 * h])
        o = _sigmoid(a[3 * h:])
        c = f * cprev + i * gg
        hh = o * np.tanh(c)
        _ew(12 * h)
        gates[t, :h] = i
        gates[t, h:2 * h] = f
        gates[t, 2 * h:3 * h] = gg
        gates[t, 3 * h:] = o
        cs[t] = c
        hs[t] = hh
        hprev, cprev = hh, c
    return hs, cs, gates


def lstm_scan_backward(w_hh, h0, c0, cs, gates, dh):
    ell, h = dh.shape
    da = np.empty((ell, 4 * h), dtype=dh.dtype)
    dh_rec = np.zeros_like(h0)
    dc_rec = np.zeros_like(c0)
    for t in range(ell - 1, -1, -1):
        i = gates[t, :h]
        f = gates[t, h:2 * h]
        gg = gates[t, 2 * h:3 * h]
        o = gates[t, 3 * h:]
        cprev = cs[t - 1] if t > 0 else c0
        tc = np.tanh(cs[t])
        dht = dh[t] + dh_rec
        do = dht * tc
        dct = dc_rec + dht * o * (1.0 - tc * tc)
        di = dct * gg
        df = dct * cprev
        dgg = dct * i
        dc_rec = dct * f
        da[t, :h] = di * i * (1.0 - i)
        da[t, h:2 * h] = df * f * (1.0 - f)
        da[t, 2 * h:3 * h] = dgg * (1.0 - gg * gg)
        da[t, 3 * h:] = do * o * (1.0 - o)
        dh_rec = _dot(da[t], w_hh.T)
        _ew(26 * h)
    return da, dh_rec, dc_rec


# ---------------------------------------------------------------------------
# GRU scan. xp is (ell x 3h) in order [r, z, n]; the reset gate multiplies the
# recurrent projection of the candidate: n = tanh(x_n + r * (h W)_n).
# ---------------------------------------------------------------------------

def gru_scan_forward(xp: np.ndarray, w_hh: np.ndarray, h0: np.ndarray):
    ell = xp.shape[0]
    h = h0.shape[0]
    saved = np.empty((ell, 4 * h), dtype=xp.dtype)  # r, z, n, hp_n
    hs = np.empty((ell, h), dtype=xp.dtype)
    hprev = h0
    for t in range(ell):
        hp = _dot(hprev, w_hh)
        r = _sigmoid(xp[t, :h] + hp[:h])
        zz = _sigmoid(xp[t, h:2 * h] + hp[h:2 * h])
        n = np.tanh(xp[t, 2 * h:] + r * hp[2 * h:])
        hh = (1.0 - zz) * n + zz * hprev
        _ew(10 * h)
        saved[t, :h] = r
        saved[t, h:2 * h] = zz
        saved[t, 2 * h:3 * h] = n
        saved[t, 3 * h:] = hp[2 * h:]
        hs[t] = hh
        hprev = hh
    return hs, saved


def gru_scan_backward(w_hh, h0, saved, hs, dh):
    ell, h = dh.shape
    dxp = np.empty((ell, 3 * h), dtype=dh.dtype)
    dhp = np.empty((ell, 3 * h), dtype=dh.dtype)
    dh_rec = np.zeros_like(h0)
    for t in range(ell - 1, -1, -1):
        r = saved[t, :h]
        zz = saved[t, h:2 * h]
        n = saved[t, 2 * h:3 * h]
        hpn = saved[t, 3 * h:]
        hprev = hs[t - 1] if t > 0 else h0
        dht = dh[t] + dh_rec
        dz = dht * (hprev - n)
        dn = dht * (1.0 - zz)
        dan = dn * (1.0 - n * n)
        dr = dan * hpn
        daz = dz * zz * (1.0 - zz)
        dar = dr * r * (1.0 - r)
        dxp[t, :h] = dar
        dxp[t, h:2 * h] = daz
        dxp[t, 2 * h:] = dan
        dhp[t, :h] = dar
        dhp[t, h:2 * h] = daz
        dhp[t, 2 * h:] = dan * r
        dh_rec = dht * zz + _dot(dhp[t], w_hh.T)
        _ew(24 * h)
    return dxp, dhp, dh_rec
