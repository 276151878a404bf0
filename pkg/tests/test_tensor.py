import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hygnn.ops import sigmoid
from hygnn.tensor import (
    Tape,
    TapeError,
    Tensor,
    TensorError,
    backward,
    create_tensor,
    finite_diff_grad,
    relative_error,
)


def tracked(values):
    return Tensor(np.asarray(values, dtype=np.float64), grad_tracked=True)


class TestCreateTensor:
    def test_row_major(self):
        t = create_tensor([2, 2], [1, 2, 3, 4])
        assert t.data[1, 0] == 3

    def test_zero_vector(self):
        t = create_tensor([3], [0, 0, 0])
        assert t.shape == (3,)
        assert not t.data.any()

    def test_length_mismatch(self):
        with pytest.raises(TensorError):
            create_tensor([2], [1, 2, 3])

    def test_data_verbatim_float64(self):
        vals = [0.1, -2.5, 1e-300]
        t = create_tensor([3], vals, grad_tracked=True)
        assert t.data.dtype == np.float64
        assert list(t.data) == vals
        assert t.grad_tracked


class TestBackward:
    def test_sum_gives_ones(self):
        x = tracked([1.0, 2.0, 3.0])
        with Tape():
            loss = x.sum()
        np.testing.assert_array_equal(backward(loss)[x].data, [1, 1, 1])

    def test_square_sum(self):
        x = tracked([1.0, -2.0, 3.0])
        with Tape():
            loss = (x * x).sum()
        g = backward(loss)[x].data
        np.testing.assert_array_equal(g, [2, -4, 6])
        numeric = finite_diff_grad(lambda t: (t * t).sum(), Tensor(x.data), 1e-6).data
        assert relative_error(g, numeric) < 1e-9

    def test_difference(self):
        a, b = tracked([1.0, 2.0]), tracked([5.0, -1.0])
        with Tape():
            loss = (a - b).sum()
        grads = backward(loss)
        np.testing.assert_array_equal(grads[a].data, [1, 1])
        np.testing.assert_array_equal(grads[b].data, [-1, -1])

    def test_non_scalar_loss(self):
        x = tracked([1.0, 2.0])
        with Tape():
            y = x * 2.0
        with pytest.raises(TapeError):
            backward(y)

    def test_loss_not_on_tape(self):
        x = tracked([1.0])
        with pytest.raises(TapeError):
            backward(x.sum())  # built outside any tape

    def test_untouched_parameter_gets_zeros(self):
        x, unused = tracked([1.0, 2.0]), tracked([[3.0, 4.0]])
        with Tape():
            loss = x.sum()
        grads = backward(loss, [x, unused])
        assert set(grads) == {x, unused}
        np.testing.assert_array_equal(grads[unused].data, np.zeros((1, 2)))

    def test_fan_out_accumulates(self):
        x = tracked([2.0])
        with Tape():
            loss = (x * x + x * 3.0 + x).sum()
        assert backward(loss)[x].data[0] == 2 * 2.0 + 3.0 + 1.0

    def test_each_leaf_appears_once_with_matching_shape(self):
        a, b = tracked(np.ones((2, 3))), tracked(np.ones(3))
        with Tape():
            loss = ((a + b) * a + b).sum()
        grads = backward(loss)
        assert list(grads) == [a, b]
        assert grads[a].shape == a.shape and grads[b].shape == b.shape

    def test_sum_of_losses_sums_gradients(self):
        rng = np.random.default_rng(0)
        x = tracked(rng.normal(size=5))

        def grad_of(fn):
            with Tape():
                loss = fn(x)
            return backward(loss)[x].data

        f1 = lambda t: (t * t).sum()
        f2 = lambda t: sigmoid(t).sum()
        np.testing.assert_allclose(grad_of(lambda t: f1(t) + f2(t)), grad_of(f1) + grad_of(f2), rtol=0, atol=1e-15)

    def test_replay_is_bitwise(self):
        rng = np.random.default_rng(1)
        x = tracked(rng.normal(size=(3, 4)))
        w = tracked(rng.normal(size=(4, 2)))

        def run():
            with Tape():
                loss = sigmoid(x @ w).mean()
            g = backward(loss)
            return g[x].data.copy(), g[w].data.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_eager_ops_are_untracked(self):
        x = tracked([1.0])
        y = x * 2.0
        assert not y.grad_tracked

    def test_cross_tape_operand_rejected(self):
        x = tracked([1.0])
        with Tape():
            y = x * 2.0
        with Tape():
            with pytest.raises(TapeError):
                y * 3.0

    def test_tapes_are_thread_confined(self):
        errors = []

        def worker(seed):
            try:
                x = tracked(np.full(4, float(seed)))
                with Tape():
                    loss = (x * x).sum()
                assert np.array_equal(backward(loss)[x].data, 2 * x.data)
            except Exception as exc:  # pragma: no cover - reported below
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors


class TestFiniteDiff:
    def test_quadratic_exact(self):
        g = finite_diff_grad(lambda t: (t * t).sum(), Tensor(np.array([1.0])), 1e-6)
        assert abs(g.data[0] - 2.0) < 1e-9

    @given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-10, 10)))
    @settings(max_examples=25, deadline=None)
    def test_sum_gives_ones(self, x):
        g = finite_diff_grad(lambda t: t.sum(), Tensor(x), 1e-6)
        np.testing.assert_allclose(g.data, 1.0, atol=1e-8)

    def test_sigmoid_at_zero(self):
        g = finite_diff_grad(lambda t: sigmoid(t).sum(), Tensor(np.array([0.0])), 1e-6)
        assert abs(g.data[0] - 0.25) < 1e-9

    def test_non_scalar_rejected(self):
        with pytest.raises(TensorError):
            finite_diff_grad(lambda t: t * 2.0, Tensor(np.ones(2)), 1e-6)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda t: t.sum(), Tensor(np.ones(2)), 0.0)


def test_relative_error_floor():
    # small numeric values are compared absolutely
    assert relative_error(np.array([1e-3]), np.array([0.0])) == pytest.approx(1e-3)
    assert relative_error(np.array([110.0]), np.array([100.0])) == pytest.approx(0.1)
