from fractions import Fraction

import numpy as np
import pytest

from hygnn.dfl import (
    BACK_END_PLAN,
    DflConfig,
    FeaturePyramid,
    back_end,
    default_scales,
    front_end,
    init_dfl,
    init_node_states,
)
from hygnn.tensor import Tape, Tensor, TensorError, backward


@pytest.fixture(scope="module")
def small():
    config = DflConfig(width_multiplier=Fraction(1, 8), scales=[1, 2, 4])
    return config, init_dfl(np.random.default_rng(0), config)


def image(B=1, H=64, W=64, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(B, 3, H, W)))


class TestFrontEnd:
    def test_shape(self, small):
        _, w = small
        assert front_end(image(2), w).shape == (2, 64, 8, 8)

    def test_deterministic(self, small):
        config, w = small
        other = init_dfl(np.random.default_rng(0), config)
        x = image(seed=3)
        assert np.array_equal(front_end(x, w).data, front_end(x, other).data)

    def test_ten_convolutions(self, small):
        _, w = small
        assert len(w.front) == 10
        assert [c.kernel.shape[0] for c in w.front] == [8, 8, 16, 16, 32, 32, 32, 64, 64, 64]

    def test_full_width_channels(self):
        w = init_dfl(np.random.default_rng(0), DflConfig(width_multiplier=Fraction(1)))
        assert w.front[-1].kernel.shape[0] == 512

    def test_indivisible_input(self, small):
        _, w = small
        with pytest.raises(TensorError):
            front_end(image(H=60), w)


class TestBackEnd:
    def test_size_preserved_and_layer_count(self, small):
        config, w = small
        f = front_end(image(), w)
        for d in (1, 2):
            assert len(w.back[d]) == 8 == len(BACK_END_PLAN) + 1
            assert all(c.dilation == 2 for c in w.back[d])
            assert back_end(f, d, w).shape == (1, config.node_channels, 8, 8)

    def test_domains_differ(self, small):
        _, w = small
        f = front_end(image(seed=1), w)
        assert not np.array_equal(back_end(f, 1, w).data, back_end(f, 2, w).data)

    def test_unknown_domain(self, small):
        _, w = small
        with pytest.raises(ValueError):
            back_end(front_end(image(), w), 3, w)


class TestNodeStates:
    def test_three_states_same_shape(self, small):
        config, _ = small
        f = Tensor(np.random.default_rng(2).normal(size=(2, 8, 8, 8)))
        pyr = init_node_states(f, config, domain=2)
        assert pyr.domain == 2 and len(pyr.states) == 3
        assert {s.shape for s in pyr.states} == {(2, 8, 8, 8)}

    def test_constant_input(self, small):
        config, _ = small
        pyr = init_node_states(Tensor(np.full((1, 4, 8, 8), 0.3)), config)
        for s in pyr.states:
            np.testing.assert_allclose(s.data, 0.3, rtol=0, atol=1e-15)

    def test_full_bins_identity(self, small):
        config, _ = small
        f = np.random.default_rng(3).normal(size=(1, 2, 8, 8))
        pyr = init_node_states(Tensor(f), config, scales=[8])
        np.testing.assert_allclose(pyr.states[0].data, f, rtol=0, atol=1e-14)

    def test_bins_too_large(self, small):
        config, _ = small
        with pytest.raises(TensorError):
            init_node_states(Tensor(np.ones((1, 2, 2, 2))), config)

    def test_gradient_reaches_front_end(self, small):
        config, w = small
        with Tape():
            f = back_end(front_end(image(seed=4), w), 1, w)
            loss = init_node_states(f, config).states[1].sum()
        grads = backward(loss, [c.kernel for c in w.front])
        assert all(np.abs(g.data).sum() > 0 for g in grads.values())


class TestConfig:
    def test_scales_validation(self):
        with pytest.raises(ValueError):
            DflConfig(scales=[2])
        with pytest.raises(ValueError):
            DflConfig(scales=[1, 1])
        with pytest.raises(ValueError):
            DflConfig(scales=[0, 2])

    def test_default_scales(self):
        assert default_scales(3) == [1, 2, 4]
        assert default_scales(5) == [1, 2, 3, 4, 6]
        assert len(set(default_scales(7))) == 7

    def test_pyramid_shapes_must_agree(self):
        with pytest.raises(TensorError):
            FeaturePyramid(1, [Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3)))])
