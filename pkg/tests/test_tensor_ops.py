"""Forward semantics of the tensor engine against naive loop oracles."""

import numpy as np
import pytest

from recalib.engine import ops
from recalib.engine.tensor import EngineError, ShapeError, Tensor, no_grad

import oracles


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestConv2d:
    def test_scalar_scaling(self):
        x = t(np.ones((1, 1, 2, 2)))
        w = t(np.full((1, 1, 1, 1), 3.0))
        out = ops.conv2d(x, w)
        assert np.array_equal(out.data, np.full((1, 1, 2, 2), 3.0))

    def test_identity_kernel(self):
        x = t(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
        w = t(np.eye(2).reshape(2, 2, 1, 1))
        out = ops.conv2d(x, w)
        assert np.allclose(out.data.reshape(2), [1.0, 2.0])

    def test_shape_preserved_with_padding(self, rng):
        x = t(rng.standard_normal((1, 3, 4, 4)))
        w = t(rng.standard_normal((5, 3, 3, 3)))
        out = ops.conv2d(x, w, padding=1)
        assert out.shape == (1, 5, 4, 4)

    @pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (1, 1, 1), (2, 1, 2), (1, 2, 4)])
    def test_matches_loop_oracle(self, rng, stride, padding, groups):
        x = rng.standard_normal((2, 4, 6, 6))
        w = rng.standard_normal((8, 4 // groups, 3, 3))
        out = ops.conv2d(t(x), t(w), stride=stride, padding=padding, groups=groups)
        ref = oracles.conv2d_ref(x, w, stride=stride, padding=padding, groups=groups)
        assert np.allclose(out.data, ref, rtol=1e-10, atol=1e-12)

    def test_rejects_bad_group_divisibility(self, rng):
        x = t(rng.standard_normal((1, 6, 4, 4)))
        w = t(rng.standard_normal((8, 2, 1, 1)))
        with pytest.raises(ShapeError, match="channels"):
            ops.conv2d(x, w, groups=4)

    def test_rejects_wrong_weight_channels(self, rng):
        x = t(rng.standard_normal((1, 6, 4, 4)))
        w = t(rng.standard_normal((8, 5, 1, 1)))
        with pytest.raises(ShapeError, match="weight channel dimension"):
            ops.conv2d(x, w)


class TestDepthwise:
    def test_elementwise_product(self):
        x = t(np.full((1, 1, 1, 1), 3.0))
        w = t(np.full((1, 1, 1, 1), 2.0))
        assert ops.depthwise_conv2d(x, w).data.item() == 6.0

    def test_per_channel_sign(self):
        x = t(np.array([1.0, -1.0]).reshape(1, 2, 1, 1))
        w = t(np.array([5.0, 5.0]).reshape(2, 1, 1, 1))
        out = ops.depthwise_conv2d(x, w)
        assert np.array_equal(out.data.reshape(2), [5.0, -5.0])

    def test_equiv_grouped_conv_on_descriptor(self, rng):
        # same arithmetic as conv2d with G=C on a 1x1 spatial input
        x = rng.standard_normal((4, 8, 1, 1))
        w = rng.standard_normal((8, 1, 1, 1))
        a = ops.depthwise_conv2d(t(x), t(w))
        b = ops.conv2d(t(x), t(w), groups=8)
        assert np.max(np.abs(a.data - b.data)) < 1e-12

    @pytest.mark.parametrize("k,stride,padding", [(3, 1, 1), (3, 2, 1), (7, 1, 3)])
    def test_matches_loop_oracle(self, rng, k, stride, padding):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((3, 1, k, k))
        out = ops.depthwise_conv2d(t(x), t(w), stride=stride, padding=padding)
        ref = oracles.depthwise_conv2d_ref(x, w, stride=stride, padding=padding)
        assert np.allclose(out.data, ref, rtol=1e-10, atol=1e-12)

    def test_rejects_channel_mismatch(self, rng):
        x = t(rng.standard_normal((1, 4, 2, 2)))
        w = t(rng.standard_normal((3, 1, 1, 1)))
        with pytest.raises(ShapeError, match="channel count"):
            ops.depthwise_conv2d(x, w)


class TestGlobalAvgPool:
    def test_mean_of_small_channel(self):
        x = t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert ops.global_avg_pool(x).data.item() == 2.5

    def test_constant_channel(self):
        x = t(np.full((2, 3, 5, 7), 4.25))
        assert np.array_equal(ops.global_avg_pool(x).data, np.full((2, 3), 4.25))

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((1, 3, 5, 7))
        out = ops.global_avg_pool(t(x))
        assert np.allclose(out.data, oracles.global_avg_pool_ref(x), rtol=1e-12)


class TestBatchNorm:
    def test_symmetric_standardization(self):
        x = t(np.array([[1.0], [3.0]]))
        g = t(np.ones(1))
        b = t(np.zeros(1))
        out = ops.batch_norm(x, g, b, np.zeros(1), np.ones(1), eps=1e-12, training=True)
        assert np.allclose(out.data.reshape(2), [-1.0, 1.0], atol=1e-5)

    def test_gamma_zero_gives_beta(self, rng):
        x = t(rng.standard_normal((4, 3)))
        g = t(np.zeros(3))
        b = t(np.array([1.0, -2.0, 0.5]))
        out = ops.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)
        assert np.allclose(out.data, np.tile([1.0, -2.0, 0.5], (4, 1)))

    def test_output_moments(self, rng):
        x = t(rng.standard_normal((8, 16)))
        g = t(np.ones(16))
        b = t(np.zeros(16))
        out = ops.batch_norm(x, g, b, np.zeros(16), np.ones(16), eps=1e-14, training=True)
        assert np.abs(out.data.mean(axis=0)).max() < 1e-10
        assert np.abs(out.data.var(axis=0) - 1.0).max() < 1e-6

    def test_running_stats_update_and_inference(self, rng):
        x = rng.standard_normal((16, 4)) * 2.0 + 1.0
        rm, rv = np.zeros(4), np.ones(4)
        g, b = t(np.ones(4)), t(np.zeros(4))
        ops.batch_norm(t(x), g, b, rm, rv, momentum=1.0, training=True)
        assert np.allclose(rm, x.mean(axis=0))
        assert np.allclose(rv, x.var(axis=0, ddof=1))
        # inference depends only on running stats
        y = rng.standard_normal((3, 4))
        out = ops.batch_norm(t(y), g, b, rm, rv, eps=0.0, training=False)
        assert np.allclose(out.data, (y - rm) / np.sqrt(rv))

    def test_rejects_batch_of_one_in_training(self):
        x = t(np.ones((1, 3)))
        g, b = t(np.ones(3)), t(np.zeros(3))
        with pytest.raises(EngineError, match="batch size"):
            ops.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert ops.sigmoid(t(np.zeros(3))).data[0] == 0.5

    def test_no_underflow_moderate_range(self):
        out = ops.sigmoid(t(np.array([-30.0, 30.0])))
        assert out.data[0] > 0.0
        assert out.data[1] < 1.0

    def test_symmetry(self, rng):
        x = rng.standard_normal(1000) * 8
        s = ops.sigmoid(t(x)).data + ops.sigmoid(t(-x)).data
        assert np.abs(s - 1.0).max() < 1e-12

    def test_strictly_inside_unit_interval_extremes(self):
        out = ops.sigmoid(t(np.array([-1e4, -800.0, 800.0, 1e300, -1e300])))
        assert (out.data > 0.0).all()
        assert (out.data < 1.0).all()


class TestScaling:
    def test_channel_scale_identity(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        out = ops.channel_scale(t(x), t(np.ones((2, 3))))
        assert np.array_equal(out.data, x)

    def test_channel_scale_zero_channel(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        p = np.ones((1, 3))
        p[0, 1] = 0.0
        out = ops.channel_scale(t(x), t(p))
        assert np.all(out.data[0, 1] == 0.0)
        assert np.array_equal(out.data[0, 0], x[0, 0])

    def test_channel_scale_oracle(self, rng):
        x = rng.standard_normal((2, 4, 3, 5))
        p = rng.standard_normal((2, 4))
        out = ops.channel_scale(t(x), t(p))
        assert np.allclose(out.data, oracles.channel_scale_ref(x, p), rtol=1e-12)

    def test_channel_scale_shape_mismatch(self, rng):
        with pytest.raises(ShapeError, match="channel count"):
            ops.channel_scale(t(rng.standard_normal((1, 3, 2, 2))), t(np.ones((1, 4))))

    def test_elementwise_identity_and_square(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        assert np.array_equal(ops.elementwise_scale(t(x), t(np.ones_like(x))).data, x)
        assert np.allclose(ops.elementwise_scale(t(x), t(x)).data, x**2)

    def test_elementwise_oracle(self, rng):
        x = rng.standard_normal((2, 2, 3, 3))
        w = rng.standard_normal((2, 2, 3, 3))
        out = ops.elementwise_scale(t(x), t(w))
        assert np.allclose(out.data, oracles.elementwise_scale_ref(x, w), rtol=1e-12)


class TestWeightedAverages:
    def test_spatial_weighted_sum_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        w = rng.standard_normal((3, 4, 5))
        out = ops.spatial_weighted_sum(t(x), t(w))
        assert np.allclose(out.data, oracles.spatial_weighted_sum_ref(x, w), rtol=1e-10)

    def test_global_linear_map_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((3, 3, 4, 4))
        out = ops.global_linear_map(t(x), t(w))
        assert np.allclose(out.data, oracles.global_linear_map_ref(x, w), rtol=1e-10)

    def test_spatial_size_binding(self, rng):
        x = t(rng.standard_normal((1, 3, 4, 4)))
        w = t(rng.standard_normal((3, 5, 5)))
        with pytest.raises(ShapeError):
            ops.spatial_weighted_sum(x, w)


class TestStandardLayers:
    def test_relu(self):
        out = ops.relu(t(np.array([-1.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 2.0])

    def test_uniform_logits_loss(self):
        logits = t(np.zeros((4, 10)))
        loss = ops.softmax_cross_entropy(logits, np.zeros(4, dtype=np.int64))
        assert np.isclose(loss.item(), np.log(10.0), rtol=1e-12)

    def test_linear_identity(self, rng):
        x = rng.standard_normal((3, 5))
        out = ops.linear(t(x), t(np.eye(5)), t(np.zeros(5)))
        assert np.allclose(out.data, x)

    def test_label_out_of_range(self):
        with pytest.raises(EngineError, match="label index"):
            ops.softmax_cross_entropy(t(np.zeros((2, 3))), np.array([0, 3]))

    def test_max_pool_oracle(self, rng):
        x = rng.standard_normal((2, 3, 7, 7))
        out = ops.max_pool2d(t(x), 3, stride=2, padding=1)
        ref = oracles.max_pool2d_ref(x, 3, 2, 1)
        assert np.array_equal(out.data, ref)

    def test_avg_pool_matches_mean(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        out = ops.avg_pool2d(t(x), 2, 2)
        ref = x.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5))
        assert np.allclose(out.data, x.reshape(1, 2, 2, 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).mean(axis=(4, 5)))


class TestAutodiffPlumbing:
    def test_backward_requires_recorded_graph(self):
        with pytest.raises(EngineError, match="no recorded forward"):
            t(np.array(1.0)).backward()

    def test_backward_requires_scalar(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        out = ops.relu(x)
        with pytest.raises(EngineError, match="scalar"):
            out.backward()

    def test_channel_scale_adjoint_closed_form(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=False)
        p = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        loss = ops.tsum(ops.channel_scale(x, p))
        loss.backward()
        assert np.allclose(p.grad, x.data.sum(axis=(2, 3)), rtol=1e-12)

    def test_sigmoid_gradient_at_zero(self):
        x = Tensor(np.zeros(1), requires_grad=True)
        out = ops.tsum(ops.sigmoid(x))
        out.backward()
        assert np.isclose(x.grad[0], 0.25)

    def test_gradients_accumulate_across_uses(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        loss = ops.tsum(ops.add(x, x))
        loss.backward()
        assert np.allclose(x.grad, 2.0 * np.ones((2, 2)))

    def test_no_grad_suppresses_graph(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with no_grad():
            out = ops.relu(x)
        assert out._grad_fn is None and not out.requires_grad

    def test_forward_determinism(self, rng):
        x = rng.standard_normal((2, 4, 6, 6))
        w = rng.standard_normal((4, 4, 3, 3))
        a = ops.conv2d(t(x), t(w), padding=1).data
        b = ops.conv2d(t(x), t(w), padding=1).data
        assert np.array_equal(a, b)

    def test_finite_outputs_on_finite_inputs(self, rng):
        x = rng.standard_normal((2, 4, 5, 5)) * 100
        w = rng.standard_normal((4, 4, 3, 3)) * 100
        out = ops.conv2d(t(x), t(w), padding=1)
        assert np.isfinite(out.data).all()
