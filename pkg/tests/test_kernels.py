"""Backend parity between the numpy reference scans and the jit mirrors."""

import os
import subprocess
import sys

import numpy as np
import pytest

from multirange import kernels
from multirange.kernels import reference
from multirange.mru import RangeSet, init_mru_params, recurrent_mru
from multirange.ops import mul, reduce_sum
from multirange.rnn import init_lstm_params, lstm_forward
from multirange.tensor import ParameterStore, Rng, Tape

needs_numba = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")


def _tol(dtype):
    return dict(rtol=1e-10, atol=1e-12) if dtype == np.float64 \
        else dict(rtol=1e-4, atol=1e-5)


class TestBackendSelection:
    def test_numpy_always_available(self):
        assert "numpy" in kernels.available_backends()

    @needs_numba
    def test_numba_listed(self):
        assert kernels.available_backends() == ["numba", "numpy"]

    def test_set_backend_returns_previous(self):
        prev = kernels.set_backend("numpy")
        try:
            assert kernels.get_backend() == "numpy"
        finally:
            kernels.set_backend(prev)
        assert kernels.get_backend() == prev

    def test_auto_resolves(self):
        prev = kernels.set_backend("auto")
        try:
            expect = "numba" if kernels.HAS_NUMBA else "numpy"
            assert kernels.get_backend() == expect
        finally:
            kernels.set_backend(prev)

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="unknown kernel backend"):
            kernels.set_backend("cuda")

    def test_use_backend_restores_on_error(self):
        before = kernels.get_backend()
        with pytest.raises(RuntimeError):
            with kernels.use_backend("numpy"):
                assert kernels.get_backend() == "numpy"
                raise RuntimeError("boom")
        assert kernels.get_backend() == before

    def test_env_flag_selects_initial_backend(self):
        env = dict(os.environ, MULTIRANGE_KERNELS="numpy")
        out = subprocess.run(
            [sys.executable, "-c",
             "from multirange import kernels; print(kernels.get_backend())"],
            env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"

    def test_env_flag_rejects_unknown(self):
        env = dict(os.environ, MULTIRANGE_KERNELS="opencl")
        out = subprocess.run(
            [sys.executable, "-c", "import multirange.kernels"],
            env=env, capture_output=True, text=True)
        assert out.returncode != 0
        assert "unknown kernel backend" in out.stderr


def _jit():
    from multirange.kernels import jit
    return jit


@needs_numba
class TestScanParity:
    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_mru_scan(self, dtype):
        rng = Rng(0)
        ell, d = 23, 5
        g = rng.uniform((ell, d), dtype=dtype)
        z = rng.normal((ell, d), dtype=dtype)
        c0 = rng.normal((d,), dtype=dtype)
        dc = rng.normal((ell, d), dtype=dtype)
        c_ref = reference.mru_scan_forward(g, z, c0)
        c_jit = _jit().mru_scan_forward(g, z, c0)
        assert np.allclose(c_ref, c_jit, **_tol(dtype))
        ref = reference.mru_scan_backward(g, z, c0, c_ref, dc)
        jj = _jit().mru_scan_backward(g, z, c0, c_jit, dc)
        for a, b in zip(ref, jj):
            assert np.allclose(a, b, **_tol(dtype))

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_lstm_scan(self, dtype):
        rng = Rng(1)
        ell, h = 17, 4
        xp = rng.normal((ell, 4 * h), dtype=dtype)
        w_hh = (rng.normal((h, 4 * h)) * 0.3).astype(dtype)
        h0 = rng.normal((h,), dtype=dtype)
        c0 = rng.normal((h,), dtype=dtype)
        dh = rng.normal((ell, h), dtype=dtype)
        hs_r, cs_r, gates_r = reference.lstm_scan_forward(xp, w_hh, h0, c0)
        hs_j, cs_j, gates_j = _jit().lstm_scan_forward(xp, w_hh, h0, c0)
        assert np.allclose(hs_r, hs_j, **_tol(dtype))
        assert np.allclose(cs_r, cs_j, **_tol(dtype))
        assert np.allclose(gates_r, gates_j, **_tol(dtype))
        ref = reference.lstm_scan_backward(w_hh, h0, c0, cs_r, gates_r, dh)
        jj = _jit().lstm_scan_backward(w_hh, h0, c0, cs_j, gates_j, dh)
        for a, b in zip(ref, jj):
            assert np.allclose(a, b, **_tol(dtype))

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_gru_scan(self, dtype):
        rng = Rng(2)
        ell, h = 19, 4
        xp = rng.normal((ell, 3 * h), dtype=dtype)
        w_hh = (rng.normal((h, 3 * h)) * 0.3).astype(dtype)
        h0 = rng.normal((h,), dtype=dtype)
        dh = rng.normal((ell, h), dtype=dtype)
        hs_r, saved_r = reference.gru_scan_forward(xp, w_hh, h0)
        hs_j, saved_j = _jit().gru_scan_forward(xp, w_hh, h0)
        assert np.allclose(hs_r, hs_j, **_tol(dtype))
        assert np.allclose(saved_r, saved_j, **_tol(dtype))
        ref = reference.gru_scan_backward(w_hh, h0, saved_r, hs_r, dh)
        jj = _jit().gru_scan_backward(w_hh, h0, saved_j, hs_j, dh)
        for a, b in zip(ref, jj):
            assert np.allclose(a, b, **_tol(dtype))


@needs_numba
class TestEndToEndParity:
    def _grads(self, backend, build):
        store, loss = build()
        with kernels.use_backend(backend):
            with Tape() as tape:
                tape.backward(loss())
        return {n: p.grad.copy() for n, p in store.trainable_items()}

    def test_recurrent_mru_gradients_match(self):
        def build():
            store = ParameterStore("fp64")
            rng = Rng(3)
            params = init_mru_params(store, rng, "m", 4, RangeSet((1, 2)), True)
            x = store.add("x", rng.normal((9, 4)))
            r = rng.normal((9, 4))
            return store, lambda: reduce_sum(mul(
                recurrent_mru(x, params, RangeSet((1, 2))), r))

        a = self._grads("numpy", build)
        b = self._grads("numba", build)
        assert a.keys() == b.keys()
        for name in a:
            assert np.allclose(a[name], b[name], rtol=1e-10, atol=1e-12), name

    def test_lstm_gradients_match(self):
        def build():
            store = ParameterStore("fp64")
            rng = Rng(4)
            params = init_lstm_params(store, rng, "l", 3, 4)
            x = store.add("x", rng.normal((8, 3)))
            r = rng.normal((8, 4))
            return store, lambda: reduce_sum(mul(lstm_forward(x, None, params), r))

        a = self._grads("numpy", build)
        b = self._grads("numba", build)
        for name in a:
            assert np.allclose(a[name], b[name], rtol=1e-10, atol=1e-12), name


class TestCounters:
    def test_reset_and_keys(self):
        kernels.reset_counters()
        c = kernels.counters()
        assert c == {"seq_matmul_calls": 0, "seq_matmul_flops": 0,
                     "seq_elementwise_flops": 0}

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_structural_counts_match_across_backends(self, backend):
        if backend == "numba" and not kernels.HAS_NUMBA:
            pytest.skip("numba not installed")
        rng = Rng(5)
        ell, h = 11, 3
        xp = rng.normal((ell, 4 * h))
        w_hh = rng.normal((h, 4 * h))
        with kernels.use_backend(backend):
            kernels.reset_counters()
            kernels.lstm_scan_forward(xp, w_hh, np.zeros(h), np.zeros(h))
            c = kernels.counters()
        assert c["seq_matmul_calls"] == ell
        assert c["seq_matmul_flops"] == ell * 2 * h * 4 * h

    @pytest.mark.parametrize("backend", ["numpy", "numba"])
    def test_mru_scan_counts_no_matmuls(self, backend):
        if backend == "numba" and not kernels.HAS_NUMBA:
            pytest.skip("numba not installed")
        rng = Rng(6)
        g = rng.uniform((13, 4))
        z = rng.normal((13, 4))
        with kernels.use_backend(backend):
            kernels.reset_counters()
            c = kernels.mru_scan_forward(g, z, np.zeros(4))
            kernels.mru_scan_backward(g, z, np.zeros(4), c, np.ones_like(g))
            counts = kernels.counters()
        assert counts["seq_matmul_calls"] == 0
        assert counts["seq_elementwise_flops"] == (4 + 7) * 13 * 4
