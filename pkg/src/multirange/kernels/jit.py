"""Numba @njit mirrors of the reference scan kernels.

Compiled bodies cannot touch Python state, so the sequential-work counters are
bumped structurally by the thin Python wrappers (the reference backend counts
the same quantities by actually executing them). fastmath stays off: kernel
output must be deterministic and match the reference within float tolerance.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .reference import COUNTERS

NAME = "numba"


@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _mru_fwd(g, z, c0, c):
    ell, d = g.shape
    for j in range(d):
        prev = c0[j]
        for t in range(ell):
            v = g[t, j] * prev + (1.0 - g[t, j]) * z[t, j]
            c[t, j] = v
            prev = v


@njit(cache=True)
def _mru_bwd(g, z, c0, c, dc, dg, dz, dc0):
    ell, d = g.shape
    for j in range(d):
        run = 0.0
        for t in range(ell - 1, -1, -1):
            tot = dc[t, j] + run
            prev = c0[j] if t == 0 else c[t - 1, j]
            dg[t, j] = tot * (prev - z[t, j])
            dz[t, j] = tot * (1.0 - g[t, j])
            run = tot * g[t, j]
        dc0[j] = run


@njit(cache=True)
def _lstm_fwd(xp, w_hh, h0, c0, gates, cs, hs):
    ell = xp.shape[0]
    h = h0.shape[0]
    hprev = h0.copy()
    cprev = c0.copy()
    for t in range(ell):
        a = np.dot(hprev, w_hh)
        for j in range(h):
            i = _sig(a[j] + xp[t, j])
            f = _sig(a[h + j] + xp[t, h + j])
            gg = math.tanh(a[2 * h + j] + xp[t, 2 * h + j])
            o = _sig(a[3 * h + j] + xp[t, 3 * h + j])
            c = f * cprev[j] + i * gg
            hh = o * math.tanh(c)
            gates[t, j] = i
            gates[t, h + j] = f
            gates[t, 2 * h + j] = gg
            gates[t, 3 * h + j] = o
            cs[t, j] = c
            hs[t, j] = hh
            hprev[j] = hh
            cprev[j] = c


@njit(cache=True)
def _lstm_bwd(w_hh_t, h0, c0, cs, gates, dh, da, dh0, dc0):
    ell, h = dh.shape
    dh_rec = np.zeros(h, dtype=dh.dtype)
    dc_rec = np.zeros(h, dtype=dh.dtype)
    for t in range(ell - 1, -1, -1):
        for j in range(h):
            i = gates[t, j]
            f = gates[t, h + j]
            gg = gates[t, 2 * h + j]
            o = gates[t, 3 * h + j]
            cprev = c0[j] if t == 0 else cs[t - 1, j]
            tc = math.tanh(cs[t, j])
            dht = dh[t, j] + dh_rec[j]
            do = dht * tc
            dct = dc_rec[j] + dht * o * (1.0 - tc * tc)
            da[t, j] = dct * gg * i * (1.0 - i)
            da[t, h + j] = dct * cprev * f * (1.0 - f)
            da[t, 2 * h + j] = dct * i * (1.0 - gg * gg)
            da[t, 3 * h + j] = do * o * (1.0 - o)
            dc_rec[j] = dct * f
        dh_rec = np.dot(da[t], w_hh_t)
    for j in range(h):
        dh0[j] = dh_rec[j]
        dc0[j] = dc_rec[j]


@njit(cache=True)
def _gru_fwd(xp, w_hh, h0, saved, hs):
    ell = xp.shape[0]
    h = h0.shape[0]
    hprev = h0.copy()
    for t in range(ell):
        hp = np.dot(hprev, w_hh)
        for j in range(h):
            r = _sig(xp[t, j] + hp[j])
            zz = _sig(xp[t, h + j] + hp[h + j])
            n = math.tanh(xp[t, 2 * h + j] + r * hp[2 * h + j])
            hh = (1.0 - zz) * n + zz * hprev[j]
            saved[t, j] = r
            saved[t, h + j] = zz
            saved[t, 2 * h + j] = n
            saved[t, 3 * h + j] = hp[2 * h + j]
            hs[t, j] = hh
            hprev[j] = hh


@njit(cache=True)
def _gru_bwd(w_hh_t, h0, saved, hs, dh, dxp, dhp, dh0):
    ell, h = dh.shape
    dh_rec = np.zeros(h, dtype=dh.dtype)
    for t in range(ell - 1, -1, -1):
        for j in range(h):
            r = saved[t, j]
            zz = saved[t, h + j]
            n = saved[t, 2 * h + j]
            hpn = saved[t, 3 * h + j]
            hprev = h0[j] if t == 0 else hs[t - 1, j]
            dht = dh[t, j] + dh_rec[j]
            dz = dht * (hprev - n)
            dn = dht * (1.0 - zz)
            dan = dn * (1.0 - n * n)
            dr = dan * hpn
            daz = dz * zz * (1.0 - zz)
            dar = dr * r * (1.0 - r)
            dxp[t, j] = dar
            dxp[t, h + j] = daz
            dxp[t, 2 * h + j] = dan
            dhp[t, j] = dar
            dhp[t, h + j] = daz
            dhp[t, 2 * h + j] = dan * r
            dh_rec[j] = dht * zz
        dh_rec = dh_rec + np.dot(dhp[t], w_hh_t)
    for j in range(h):
        dh0[j] = dh_rec[j]


def _c(a):
    return np.ascontiguousarray(a)


def mru_scan_forward(g, z, c0):
    c = np.empty_like(g)
    _mru_fwd(_c(g), _c(z), _c(c0), c)
    COUNTERS["seq_elementwise_flops"] += 4 * g.size
    return c


def mru_scan_backward(g, z, c0, c, dc):
    dg = np.empty_like(g)
    dz = np.empty_like(g)
    dc0 = np.empty_like(c0)
    _mru_bwd(_c(g), _c(z), _c(c0), _c(c), _c(dc), dg, dz, dc0)
    COUNTERS["seq_elementwise_flops"] += 7 * g.size
    return dg, dz, dc0


def lstm_scan_forward(xp, w_hh, h0, c0):
    ell = xp.shape[0]
    h = h0.shape[0]
    gates = np.empty((ell, 4 * h), dtype=xp.dtype)
    cs = np.empty((ell, h), dtype=xp.dtype)
    hs = np.empty((ell, h), dtype=xp.dtype)
    _lstm_fwd(_c(xp), _c(w_hh), _c(h0), _c(c0), gates, cs, hs)
    COUNTERS["seq_matmul_calls"] += ell
    COUNTERS["seq_matmul_flops"] += ell * 2 * w_hh.shape[0] * w_hh.shape[1]
    COUNTERS["seq_elementwise_flops"] += 12 * ell * h
    return hs, cs, gates


def lstm_scan_backward(w_hh, h0, c0, cs, gates, dh):
    ell, h = dh.shape
    da = np.empty((ell, 4 * h), dtype=dh.dtype)
    dh0 = np.empty_like(h0)
    dc0 = np.empty_like(c0)
    _lstm_bwd(_c(w_hh.T), _c(h0), _c(c0), _c(cs), _c(gates), _c(dh), da, dh0, dc0)
    COUNTERS["seq_matmul_calls"] += ell
    COUNTERS["seq_matmul_flops"] += ell * 2 * w_hh.shape[0] * w_hh.shape[1]
    COUNTERS["seq_elementwise_flops"] += 26 * ell * h
    return da, dh0, dc0


def gru_scan_forward(xp, w_hh, h0):
    ell = xp.shape[0]
    h = h0.shape[0]
    saved = np.empty((ell, 4 * h), dtype=xp.dtype)
    hs = np.empty((ell, h), dtype=xp.dtype)
    _gru_fwd(_c(xp), _c(w_hh), _c(h0), saved, hs)
    COUNTERS["seq_matmul_calls"] += ell
    COUNTERS["seq_matmul_flops"] += ell * 2 * w_hh.shape[0] * w_hh.shape[1]
    COUNTERS["seq_elementwise_flops"] += 10 * ell * h
    return hs, saved


def gru_scan_backward(w_hh, h0, saved, hs, dh):
    ell, h = dh.shape
    dxp = np.empty((ell, 3 * h), dtype=dh.dtype)
    dhp = np.empty((ell, 3 * h), dtype=dh.dtype)
    dh0 = np.empty_like(h0)
    _gru_bwd(_c(w_hh.T), _c(h0), _c(saved), _c(hs), _c(dh), dxp, dhp, dh0)
    COUNTERS["seq_matmul_calls"] += ell
    COUNTERS["seq_matmul_flops"] += ell * 2 * w_hh.shape[0] * w_hh.shape[1]
    COUNTERS["seq_elementwise_flops"] += 24 * ell * h
    return dxp, dhp, dh0
