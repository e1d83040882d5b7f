"""Autodiff core: op semantics, gradients, tape mechanics, rng, store."""

import math

import numpy as np
import pytest

from multirange import ops
from multirange.ops import (add, add_bias, block_repeat, concat, gather_rows, matmul,
                            mul, pad_rows, reduce_mean, reduce_sum, relu, reshape,
                            segment_sum, sigmoid, slice_rows, softmax,
                            softmax_cross_entropy, sub, tanh, transpose)
from multirange.tensor import (MaskError, ParameterStore, Rng, ShapeError, Tape,
                               Tensor, backward)
from util import fd_check, t


class TestMatmul:
    def test_identity(self):
        out = matmul(t(np.eye(2)), t([[5.0], [7.0]]))
        assert np.array_equal(out.data, [[5.0], [7.0]])

    def test_hand_sum(self):
        out = matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[1.0], [1.0]]))
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_gradient(self):
        store = ParameterStore("fp64")
        rng = Rng(0)
        a = store.add("a", rng.normal((3, 4)))
        b = store.add("b", rng.normal((4, 2)))
        r = rng.normal((3, 2))
        assert fd_check(lambda: reduce_sum(mul(matmul(a, b), r)), store) < 1e-4


class TestElementwise:
    def test_relu_values(self):
        out = relu(t([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_zero(self):
        assert sigmoid(t([0.0])).data[0] == pytest.approx(0.5)

    def test_tanh_zero(self):
        assert tanh(t([0.0])).data[0] == 0.0

    def test_relu_grad_zero_at_kink(self):
        x = Tensor(np.array([0.0, -1.0, 3.0]))
        with Tape() as tape:
            store = ParameterStore("fp64")
            p = store.add("x", np.array([0.0, -1.0, 3.0]))
            tape.backward(reduce_sum(relu(p)))
        assert np.array_equal(p.grad, [0.0, 0.0, 1.0])
        del x

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(t(np.ones((2, 2))), t(np.ones((3, 2))))

    @pytest.mark.parametrize("op,fn", [
        (sigmoid, lambda v: 1 / (1 + np.exp(-v))),
        (tanh, np.tanh),
    ])
    def test_unary_matches_numpy(self, op, fn):
        x = np.linspace(-3, 3, 13)
        assert np.allclose(op(t(x)).data, fn(x), atol=1e-12)

    @pytest.mark.parametrize("name", ["add", "sub", "mul", "sigmoid", "tanh"])
    def test_gradients(self, name):
        store = ParameterStore("fp64")
        rng = Rng(7)
        x = store.add("x", rng.normal((4, 3)) + 0.2)
        y = store.add("y", rng.normal((4, 3)) + 0.1)
        r = rng.normal((4, 3))
        builds = {
            "add": lambda: reduce_sum(mul(add(x, y), r)),
            "sub": lambda: reduce_sum(mul(sub(x, y), r)),
            "mul": lambda: reduce_sum(mul(mul(x, y), r)),
            "sigmoid": lambda: reduce_sum(mul(sigmoid(x), r)),
            "tanh": lambda: reduce_sum(mul(tanh(x), r)),
        }
        assert fd_check(builds[name], store) < 1e-4

    def test_relu_gradient_off_kink(self):
        store = ParameterStore("fp64")
        rng = Rng(8)
        # keep coordinates away from the kink so central differences are valid
        x = store.add("x", rng.normal((5, 3)) + np.where(rng.normal((5, 3)) > 0, 0.5, -0.5))
        r = rng.normal((5, 3))
        assert fd_check(lambda: reduce_sum(mul(relu(x), r)), store) < 1e-4


class TestSoftmax:
    def test_hand_example(self):
        out = softmax(t([[0.0, math.log(2.0)]]))
        assert np.allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = Rng(3)
        out = softmax(t(rng.normal((6, 9)) * 4))
        assert np.all(np.abs(out.data.sum(axis=-1) - 1.0) < 1e-12)

    def test_mask_exact_zero(self):
        mask = np.array([[1, 1, 0, 1]])
        out = softmax(t([[1.0, 2.0, 50.0, 3.0]]), mask)
        assert out.data[0, 2] == 0.0
        assert out.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_all_masked_row_rejected(self):
        with pytest.raises(MaskError):
            softmax(t([[1.0, 2.0]]), np.array([[0, 0]]))

    def test_shift_invariance(self):
        x = np.array([[0.5, -1.0, 2.0]])
        a = softmax(t(x)).data
        b = softmax(t(x + 100.0)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_gradient(self):
        store = ParameterStore("fp64")
        rng = Rng(4)
        x = store.add("x", rng.normal((3, 5)))
        r = rng.normal((3, 5))
        assert fd_check(lambda: reduce_sum(mul(softmax(x), r)), store) < 1e-4

    def test_gradient_masked(self):
        store = ParameterStore("fp64")
        rng = Rng(5)
        x = store.add("x", rng.normal((2, 5)))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 0]])
        r = rng.normal((2, 5))
        assert fd_check(lambda: reduce_sum(mul(softmax(x, mask), r)), store) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = softmax_cross_entropy(t([[0.0, 0.0, 0.0, 0.0]]), np.array([2]))
        assert loss.item() == pytest.approx(math.log(4.0), abs=1e-12)

    def test_confident_logit_low_loss(self):
        loss = softmax_cross_entropy(t([[50.0, 0.0, 0.0]]), np.array([0]))
        assert loss.item() < 1e-12

    def test_gradient_is_probs_minus_onehot(self):
        x = np.array([[0.3, -0.7, 1.2]])
        store = ParameterStore("fp64")
        p = store.add("x", x.copy())
        with Tape() as tape:
            tape.backward(softmax_cross_entropy(p, np.array([1])))
        probs = np.exp(x) / np.exp(x).sum()
        expect = probs.copy()
        expect[0, 1] -= 1.0
        assert np.allclose(p.grad, expect, atol=1e-12)

    def test_gradient_fd(self):
        store = ParameterStore("fp64")
        rng = Rng(6)
        x = store.add("x", rng.normal((3, 4)))
        labels = np.array([0, 3, 1])
        assert fd_check(lambda: softmax_cross_entropy(x, labels), store) < 1e-4

    def test_mean_over_batch(self):
        x = t([[5.0, 0.0], [0.0, 5.0]])
        loss = softmax_cross_entropy(x, np.array([1, 0]))
        single = softmax_cross_entropy(t([[5.0, 0.0]]), np.array([1]))
        assert loss.item() == pytest.approx(single.item(), abs=1e-12)


class TestSegmentBlock:
    def test_segment_sum_exact(self):
        out = segment_sum(t([[1.0], [2.0], [3.0], [4.0]]), 2)
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_segment_sum_tail(self):
        out = segment_sum(t([[1.0], [2.0], [3.0], [4.0], [5.0]]), 2)
        assert np.array_equal(out.data, [[3.0], [7.0], [5.0]])

    def test_block_repeat(self):
        out = block_repeat(t([[1.0, 10.0], [2.0, 20.0]]), 2, 4)
        assert np.array_equal(out.data, [[1, 10], [1, 10], [2, 20], [2, 20]])

    def test_block_repeat_tail(self):
        out = block_repeat(t([[1.0], [2.0], [3.0]]), 2, 5)
        assert np.array_equal(out.data, [[1], [1], [2], [2], [3]])

    def test_r1_roundtrip_identity(self):
        rng = Rng(9)
        x = rng.normal((7, 3))
        out = block_repeat(segment_sum(t(x), 1), 1, 7)
        assert np.array_equal(out.data, x)

    def test_r1_gradient_mass_preserved(self):
        store = ParameterStore("fp64")
        rng = Rng(10)
        x = store.add("x", rng.normal((6, 2)))
        g_out = rng.normal((6, 2))
        with Tape() as tape:
            y = block_repeat(segment_sum(x, 1), 1, 6)
            tape.backward(reduce_sum(mul(y, g_out)))
        assert np.allclose(x.grad.sum(), g_out.sum(), atol=1e-12)

    def test_roundtrip_gradient_scales_by_r(self):
        # each input row receives the summed output-grad of its block, so the
        # total input-grad mass is r times the output mass on full blocks
        store = ParameterStore("fp64")
        rng = Rng(11)
        x = store.add("x", rng.normal((6, 2)))
        g_out = rng.normal((6, 2))
        with Tape() as tape:
            y = block_repeat(segment_sum(x, 3), 3, 6)
            tape.backward(reduce_sum(mul(y, g_out)))
        assert np.allclose(x.grad.sum(), 3.0 * g_out.sum(), atol=1e-10)

    @pytest.mark.parametrize("ell,r", [(6, 2), (7, 3), (5, 5), (4, 1)])
    def test_gradients(self, ell, r):
        store = ParameterStore("fp64")
        rng = Rng(12)
        x = store.add("x", rng.normal((ell, 3)))
        n_blocks = -(-ell // r)
        r1 = rng.normal((n_blocks, 3))
        r2 = rng.normal((ell, 3))

        def build():
            contracted = segment_sum(x, r)
            a = reduce_sum(mul(contracted, r1))
            b = reduce_sum(mul(block_repeat(contracted, r, ell), r2))
            return add(a, b)

        assert fd_check(build, store) < 1e-4


class TestShapeOps:
    def test_transpose_roundtrip(self):
        rng = Rng(13)
        x = rng.normal((3, 5))
        assert np.array_equal(transpose(transpose(t(x))).data, x)

    def test_slice_pad_gather(self):
        x = t(np.arange(12.0).reshape(4, 3))
        sl = slice_rows(x, 1, 3)
        assert np.array_equal(sl.data, [[3, 4, 5], [6, 7, 8]])
        padded = pad_rows(sl, 4)
        assert padded.shape == (4, 3)
        assert np.array_equal(padded.data[2:], np.zeros((2, 3)))
        picked = gather_rows(x, np.array([3, 0, 0]))
        assert np.array_equal(picked.data, [[9, 10, 11], [0, 1, 2], [0, 1, 2]])

    def test_gather_rows_grad_accumulates_duplicates(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.arange(6.0).reshape(3, 2))
        with Tape() as tape:
            y = gather_rows(x, np.array([1, 1, 0]))
            tape.backward(reduce_sum(y))
        assert np.array_equal(x.grad, [[1, 1], [2, 2], [0, 0]])

    def test_concat_and_reshape_gradients(self):
        store = ParameterStore("fp64")
        rng = Rng(14)
        a = store.add("a", rng.normal((3, 2)))
        b = store.add("b", rng.normal((3, 4)))
        r = rng.normal((1, 18))

        def build():
            joined = concat([a, b], axis=-1)
            return reduce_sum(mul(reshape(joined, (1, 18)), r))

        assert fd_check(build, store) < 1e-4

    def test_add_bias_broadcast(self):
        out = add_bias(t(np.zeros((3, 2))), t([1.0, 2.0]))
        assert np.array_equal(out.data, [[1, 2], [1, 2], [1, 2]])

    def test_add_bias_gradient(self):
        store = ParameterStore("fp64")
        rng = Rng(15)
        x = store.add("x", rng.normal((4, 3)))
        b = store.add("b", rng.normal((3,)))
        r = rng.normal((4, 3))
        assert fd_check(lambda: reduce_sum(mul(add_bias(x, b), r)), store) < 1e-4

    def test_reduce_ops(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        assert reduce_sum(x).item() == 10.0
        assert reduce_mean(x).item() == 2.5
        assert np.array_equal(reduce_sum(x, axis=0).data, [4.0, 6.0])
        mask = np.array([1, 0])
        assert np.array_equal(reduce_mean(x, axis=0, mask=mask).data, [1.0, 2.0])

    def test_reduce_gradients(self):
        store = ParameterStore("fp64")
        rng = Rng(16)
        x = store.add("x", rng.normal((5, 3)))
        mask = np.array([1, 1, 1, 0, 0])
        r = rng.normal((3,))

        def build():
            a = reduce_sum(x)
            b = reduce_sum(mul(reduce_mean(x, axis=0, mask=mask), r))
            return add(a, b)

        assert fd_check(build, store) < 1e-4


class TestTape:
    def test_dot_product_grad(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.array([1.0, 2.0, 3.0]))
        yv = np.array([4.0, 5.0, 6.0])
        with Tape() as tape:
            tape.backward(reduce_sum(mul(x, yv)))
        assert np.array_equal(x.grad, yv)

    def test_sum_sigmoid_linear_fd(self):
        store = ParameterStore("fp64")
        rng = Rng(17)
        w = store.add("w", rng.normal((3, 4)))
        xv = rng.normal((2, 3))
        assert fd_check(lambda: reduce_sum(sigmoid(matmul(Tensor(xv), w))), store) < 1e-4

    def test_unused_param_grad_zero(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.ones(3))
        unused = store.add("unused", np.ones(2))
        with Tape() as tape:
            tape.backward(reduce_sum(mul(x, x)))
        assert np.array_equal(unused.grad, np.zeros(2))

    def test_reused_tensor_accumulates(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.array([3.0]))
        with Tape() as tape:
            tape.backward(reduce_sum(add(x, x)))
        assert np.array_equal(x.grad, [2.0])

    def test_grads_accumulate_across_backwards(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.array([2.0]))
        for _ in range(2):
            with Tape() as tape:
                tape.backward(reduce_sum(mul(x, x)))
        assert np.array_equal(x.grad, [8.0])

    def test_no_tape_runs_forward_only(self):
        x = t([[1.0, -2.0]])
        out = relu(x)
        assert out.tape is None
        assert np.array_equal(out.data, [[1.0, 0.0]])

    def test_constants_receive_no_grad(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.array([1.0, 2.0]))
        c = ops.constant(np.array([5.0, 6.0]))
        with Tape() as tape:
            tape.backward(reduce_sum(mul(x, c)))
        assert c.grad is None
        assert np.array_equal(x.grad, [5.0, 6.0])

    def test_backward_requires_scalar(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.ones((2, 2)))
        with pytest.raises(ShapeError):
            with Tape() as tape:
                tape.backward(mul(x, x))

    def test_module_level_backward_helper(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.array([4.0]))
        with Tape():
            backward(reduce_sum(mul(x, x)))
        assert np.array_equal(x.grad, [8.0])


class TestParameterStore:
    def test_dtype_cast(self):
        store = ParameterStore("fp32")
        p = store.add("w", np.ones((2, 2), dtype=np.float64))
        assert p.data.dtype == np.float32

    def test_bad_dtype_rejected(self):
        with pytest.raises(ValueError):
            ParameterStore("fp16")

    def test_duplicate_name_rejected(self):
        store = ParameterStore("fp32")
        store.add("w", np.ones(2))
        with pytest.raises(ValueError):
            store.add("w", np.ones(2))

    def test_snapshot_roundtrip(self):
        store = ParameterStore("fp64")
        p = store.add("w", np.arange(4.0))
        snap = store.snapshot()
        p.data += 100.0
        store.load_state(snap)
        assert np.array_equal(p.data, np.arange(4.0))

    def test_non_trainable_has_no_grad_buffer(self):
        store = ParameterStore("fp32")
        p = store.add("frozen", np.ones(3), trainable=False)
        assert p.grad is None
        assert not store.is_trainable("frozen")

    def test_zero_grads(self):
        store = ParameterStore("fp64")
        x = store.add("x", np.ones(2))
        with Tape() as tape:
            tape.backward(reduce_sum(mul(x, x)))
        store.zero_grads()
        assert np.array_equal(x.grad, np.zeros(2))


class TestRng:
    def test_seed_reproducibility(self):
        a = Rng(42).normal((5, 5))
        b = Rng(42).normal((5, 5))
        assert np.array_equal(a, b)

    def test_split_streams_differ(self):
        root = Rng(42)
        a = root.split("embed").normal((4,))
        b = root.split("init").normal((4,))
        assert not np.array_equal(a, b)

    def test_split_is_stable(self):
        a = Rng(7).split("x").normal((3,))
        b = Rng(7).split("x").normal((3,))
        assert np.array_equal(a, b)

    def test_glorot_bounds(self):
        w = Rng(1).glorot(30, 10)
        bound = math.sqrt(6.0 / 40.0)
        assert w.shape == (30, 10)
        assert np.all(np.abs(w) <= bound)

    def test_permutation_is_permutation(self):
        p = Rng(3).permutation(20)
        assert sorted(p.tolist()) == list(range(20))
