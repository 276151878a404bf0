import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hygnn import ops
from hygnn.gradcheck import check_function, op_cases
from hygnn.ops import ConvGruParams, ConvParams
from hygnn.optim import AdamState, adam_step
from hygnn.tensor import Tape, Tensor, TensorError, backward, finite_diff_grad, relative_error


def conv_loop(x, w, b, stride=1, padding=0, dilation=1):
    """Dense-loop cross-correlation, written independently of the im2col path."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[o, c, u, v] * xp[n, c, i * stride + u * dilation, j * stride + v * dilation]
                    out[n, o, i, j] = acc
    return out


def conv(kernel, bias=None, **kw):
    kernel = np.asarray(kernel, dtype=np.float64)
    if bias is None:
        bias = np.zeros(kernel.shape[0])
    return ConvParams(Tensor(kernel), Tensor(np.asarray(bias, dtype=np.float64)), **kw)


def zero_gru(C):
    z = lambda: conv(np.zeros((C, 2 * C, 3, 3)), padding=1)
    return ConvGruParams(z(), z(), z())


class TestConv2d:
    def test_scalar_kernel(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), conv([[[[2.0]]]]))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_all_ones_kernel_sums_window(self):
        x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
        out = ops.conv2d(Tensor(x), conv(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 45.0

    def test_dilation(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 5, 5))), conv(np.ones((1, 1, 3, 3)), dilation=2))
        assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 2, 2), (3, 0, 1)])
    def test_matches_loop_oracle(self, stride, padding, dilation):
        rng = np.random.default_rng(stride * 10 + padding + dilation)
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = ops.conv2d(Tensor(x), conv(w, b, stride=stride, padding=padding, dilation=dilation)).data
        np.testing.assert_allclose(got, conv_loop(x, w, b, stride, padding, dilation), rtol=0, atol=1e-12)

    @given(k=st.sampled_from([1, 3, 5]), dilation=st.integers(1, 3), h=st.integers(1, 7), w=st.integers(1, 7))
    @settings(max_examples=30, deadline=None)
    def test_same_padding_preserves_size(self, k, dilation, h, w):
        params = conv(np.ones((2, 1, k, k)), padding=dilation * (k - 1) // 2, dilation=dilation)
        assert ops.conv2d(Tensor(np.ones((1, 1, h, w))), params).shape == (1, 2, h, w)

    def test_channel_mismatch(self):
        with pytest.raises(TensorError):
            ops.conv2d(Tensor(np.ones((1, 2, 3, 3))), conv(np.ones((1, 3, 1, 1))))

    def test_non_positive_output(self):
        with pytest.raises(TensorError):
            ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), conv(np.ones((1, 1, 3, 3))))

    def test_even_kernel_rejected(self):
        with pytest.raises(TensorError):
            conv(np.ones((1, 1, 2, 2)))


class TestResize:
    def test_corner_aligned_row(self):
        out = ops.bilinear_resize(Tensor(np.array([[[[0.0, 1.0]]]])), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0, 1 / 3, 2 / 3, 1], rtol=0, atol=1e-15)

    def test_same_size_is_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 5, 4))
        assert np.array_equal(ops.bilinear_resize(Tensor(x), 5, 4).data, x)

    @given(st.floats(-5, 5), st.integers(1, 9), st.integers(1, 9))
    @settings(max_examples=30, deadline=None)
    def test_constant_stays_constant(self, c, oh, ow):
        out = ops.bilinear_resize(Tensor(np.full((1, 2, 3, 4), c)), oh, ow)
        np.testing.assert_allclose(out.data, c, rtol=1e-14, atol=1e-14)

    def test_bad_target(self):
        with pytest.raises(TensorError):
            ops.bilinear_resize(Tensor(np.ones((1, 1, 2, 2))), 0, 3)


class TestPyramidPool:
    @pytest.mark.parametrize("bins", [1, 2, 3, 4])
    def test_constant(self, bins):
        out = ops.pyramid_pool(Tensor(np.full((1, 2, 4, 5), 1.75)), bins)
        np.testing.assert_allclose(out.data, 1.75, rtol=0, atol=1e-15)

    def test_full_bins_identity(self):
        x = np.random.default_rng(1).normal(size=(1, 2, 4, 4))
        np.testing.assert_allclose(ops.pyramid_pool(Tensor(x), 4).data, x, rtol=0, atol=1e-15)

    def test_single_bin_is_global_mean(self):
        x = np.random.default_rng(2).normal(size=(1, 1, 4, 4))
        np.testing.assert_allclose(ops.pyramid_pool(Tensor(x), 1).data, x.mean(), rtol=0, atol=1e-15)

    @given(bins=st.sampled_from([1, 2, 4]), mult=st.integers(1, 3), seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_mean_preserved_when_bins_divide(self, bins, mult, seed):
        H = W = bins * mult * 2
        x = np.random.default_rng(seed).normal(size=(1, 3, H, W))
        out = ops.pyramid_pool(Tensor(x), bins).data
        np.testing.assert_allclose(out.mean(axis=(2, 3)), x.mean(axis=(2, 3)), rtol=0, atol=1e-13)

    def test_too_many_bins(self):
        with pytest.raises(TensorError):
            ops.pyramid_pool(Tensor(np.ones((1, 1, 3, 5))), 4)


class TestSigmoid:
    def test_zero(self):
        assert ops.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5

    def test_saturation(self):
        assert abs(ops.sigmoid(Tensor(np.array([40.0]))).data[0] - 1.0) < 1e-9
        assert np.isfinite(ops.sigmoid(Tensor(np.array([-1e4]))).data).all()

    def test_symmetry(self):
        x = np.random.default_rng(3).normal(scale=5, size=100)
        np.testing.assert_allclose(ops.sigmoid(Tensor(-x)).data, 1 - ops.sigmoid(Tensor(x)).data, atol=1e-15)


class TestConvGru:
    def test_zero_params_halve_state(self):
        s = np.random.default_rng(4).normal(size=(1, 2, 4, 4))
        x = np.random.default_rng(5).normal(size=(1, 2, 4, 4))
        out = ops.conv_gru_step(Tensor(s), Tensor(x), zero_gru(2))
        np.testing.assert_allclose(out.data, 0.5 * s, rtol=0, atol=1e-15)

    def test_all_zero(self):
        out = ops.conv_gru_step(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 3, 3))), zero_gru(2))
        assert not out.data.any()

    def test_shape_and_mismatch(self):
        gru = ops.init_conv_gru(np.random.default_rng(0), 3)
        s = Tensor(np.random.default_rng(1).normal(size=(2, 3, 5, 4)))
        assert ops.conv_gru_step(s, s, gru).shape == s.shape
        with pytest.raises(TensorError):
            ops.conv_gru_step(s, Tensor(np.ones((2, 3, 5, 5))), gru)


class TestDynamicConv:
    def test_identity_is_bitwise(self):
        x = np.random.default_rng(6).normal(size=(2, 3, 4, 5))
        k = np.broadcast_to(np.eye(3)[None, :, :, None, None], (2, 3, 3, 1, 1)).copy()
        assert np.array_equal(ops.dynamic_conv(Tensor(x), Tensor(k)).data, x)

    def test_zero_kernel(self):
        x = np.random.default_rng(7).normal(size=(1, 2, 3, 3))
        assert not ops.dynamic_conv(Tensor(x), Tensor(np.zeros((1, 2, 2, 1, 1)))).data.any()

    def test_swap_channels(self):
        x = np.random.default_rng(8).normal(size=(1, 2, 3, 3))
        swap = np.array([[0.0, 1.0], [1.0, 0.0]])[None, :, :, None, None]
        out = ops.dynamic_conv(Tensor(x), Tensor(swap)).data
        np.testing.assert_array_equal(out, x[:, ::-1])

    def test_per_sample_kernels(self):
        x = np.ones((2, 2, 1, 1))
        k = np.zeros((2, 2, 2, 1, 1))
        k[0, :, :, 0, 0] = np.eye(2)
        k[1, :, :, 0, 0] = 2 * np.eye(2)
        out = ops.dynamic_conv(Tensor(x), Tensor(k)).data
        np.testing.assert_array_equal(out[:, :, 0, 0], [[1, 1], [2, 2]])

    def test_batch_mismatch(self):
        with pytest.raises(TensorError):
            ops.dynamic_conv(Tensor(np.ones((2, 2, 3, 3))), Tensor(np.ones((1, 2, 2, 1, 1))))


class TestConcat:
    def test_single_input_identity(self):
        x = Tensor(np.ones((1, 2, 3, 3)))
        assert ops.concat_channels([x]) is x

    def test_layout(self):
        rng = np.random.default_rng(9)
        parts = [Tensor(rng.normal(size=(2, 4, 3, 3))) for _ in range(3)]
        out = ops.concat_channels(parts).data
        assert out.shape == (2, 12, 3, 3)
        np.testing.assert_array_equal(out[:, 4:8], parts[1].data)

    def test_mismatch(self):
        with pytest.raises(TensorError):
            ops.concat_channels([Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 4)))])


class TestMse:
    def test_equal_is_zero(self):
        x = np.random.default_rng(10).normal(size=(2, 3))
        assert ops.mse_loss(Tensor(x), x).item() == 0.0

    def test_value(self):
        assert ops.mse_loss(Tensor(np.array([1.0, 2.0])), np.zeros(2)).item() == 2.5

    def test_sum_reduction(self):
        assert ops.mse_loss(Tensor(np.array([1.0, 2.0])), np.zeros(2), reduction="sum").item() == 5.0

    def test_gradient(self):
        rng = np.random.default_rng(11)
        pred, target = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
        p = Tensor(pred, grad_tracked=True)
        with Tape():
            loss = ops.mse_loss(p, target)
        g = backward(loss)[p].data
        np.testing.assert_allclose(g, 2 * (pred - target) / pred.size, rtol=0, atol=1e-15)
        numeric = finite_diff_grad(lambda t: ops.mse_loss(t, target), Tensor(pred), 1e-6).data
        assert relative_error(g, numeric) < 1e-8

    def test_errors(self):
        with pytest.raises(TensorError):
            ops.mse_loss(Tensor(np.ones(2)), np.ones(3))
        with pytest.raises(TensorError):
            ops.mse_loss(Tensor(np.ones(2)), Tensor(np.ones(2), grad_tracked=True))


def test_max_pool_values_and_routing():
    x = Tensor(np.array([[[[1.0, 5.0], [3.0, 5.0]]]]), grad_tracked=True)
    with Tape():
        y = ops.max_pool2d(x)
        loss = y.sum()
    assert y.data.item() == 5.0
    np.testing.assert_array_equal(backward(loss)[x].data, [[[[0, 1], [0, 0]]]])


@pytest.mark.parametrize("case", op_cases(np.random.default_rng(0)), ids=lambda c: c[0])
def test_op_gradients_match_finite_differences(case):
    name, fn, inputs = case
    for row in check_function(name, fn, inputs, np.random.default_rng(1)):
        assert row.rel_error < 1e-4, row


class TestAdam:
    def _one(self, grad, **kw):
        p = Tensor(np.array([1.0, -2.0]), grad_tracked=True)
        grads = {p: Tensor(np.asarray(grad, dtype=np.float64))}
        state = AdamState(**kw)
        adam_step({"p": p}, grads, state)
        return p.data, state

    def test_zero_gradient_no_decay(self):
        data, _ = self._one([0.0, 0.0], weight_decay=0.0)
        np.testing.assert_array_equal(data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        data, _ = self._one([1.0, 1.0], lr=1e-4, weight_decay=0.0)
        # m_hat = 1, v_hat = 1  ->  delta = -lr / (1 + eps)
        np.testing.assert_allclose(data - [1.0, -2.0], -1e-4 / (1 + 1e-8), rtol=0, atol=1e-15)

    def test_decoupled_decay(self):
        data, state = self._one([0.0, 0.0], lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(data, np.array([1.0, -2.0]) * (1 - 0.05), rtol=1e-15)
        assert not state.m["p"].any()  # decay never reaches the moments

    def test_step_counter(self):
        p = Tensor(np.zeros(1), grad_tracked=True)
        state = AdamState()
        for k in range(3):
            adam_step({"p": p}, {p: Tensor(np.ones(1))}, state)
            assert state.step == k + 1

    def test_missing_gradient(self):
        p = Tensor(np.zeros(1), grad_tracked=True)
        with pytest.raises(KeyError):
            adam_step({"p": p}, {}, AdamState())

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(12)
        p = Tensor(rng.normal(size=4), grad_tracked=True)
        ref = p.data.copy()
        m = v = np.zeros(4)
        state = AdamState(lr=1e-2, weight_decay=1e-2)
        for t in range(1, 6):
            g = rng.normal(size=4)
            adam_step({"p": p}, {p: Tensor(g)}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref * (1 - 1e-4)
            ref = ref - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.data, ref, rtol=1e-13)
