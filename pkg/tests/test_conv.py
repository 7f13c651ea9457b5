import numpy as np
import pytest

from conftest import check_grads, tape_grads

from dcvlm.autograd import Tensor, reduce_sum, sigmoid
from dcvlm.conv import (
    DecomposedConvLayer,
    FullDWConv3dLayer,
    MultiplyCounter,
    benchmark_pair,
    count_cost,
    decomposed_block,
    dwconv1d_axis,
    full_dwconv3d,
    full_dwconv3d_block,
    naive_dwconv1d_axis,
    naive_full_dwconv3d,
)
from dcvlm.layers import ConfigError


def dec_layer(channels, k, seed=0, dtype=np.float64):
    return DecomposedConvLayer(channels, k, np.random.default_rng(seed), dtype=dtype)


def full_layer(channels, k, seed=0, dtype=np.float64):
    return FullDWConv3dLayer(channels, k, np.random.default_rng(seed), dtype=dtype)


def delta_kernel_1d(channels, k, dtype=np.float64):
    w = np.zeros((channels, k), dtype=dtype)
    w[:, k // 2] = 1.0
    return w


class TestAxisConv:
    def test_delta_kernel_is_identity(self):
        layer = dec_layer(3, 5)
        x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 4, 4, 4)))
        for axis in "hwd":
            getattr(layer, f"weight_{axis}").data = delta_kernel_1d(3, 5)
            getattr(layer, f"bias_{axis}").data[:] = 0.0
            out = dwconv1d_axis(x, axis, layer)
            assert np.array_equal(out.data, x.data)

    def test_hand_convolution(self):
        # 1x2x3 line [1,2,3] against [1,1,1], zero padded -> [3,6,5]
        layer = dec_layer(1, 3)
        layer.weight_d.data = np.ones((1, 3))
        layer.bias_d.data[:] = 0.0
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 1, 3))
        out = dwconv1d_axis(x, "d", layer)
        assert np.array_equal(out.data.reshape(-1), [3.0, 6.0, 5.0])

    @pytest.mark.parametrize("axis", ["h", "w", "d"])
    def test_matches_naive_reference_exactly(self, axis):
        rng = np.random.default_rng(7)
        layer = dec_layer(3, 3, seed=7)
        x = rng.standard_normal((2, 3, 4, 5, 6))
        fast = dwconv1d_axis(Tensor(x), axis, layer).data
        slow = naive_dwconv1d_axis(
            x, axis, layer.axis_weight(axis).data, layer.axis_bias(axis).data
        )
        assert np.array_equal(fast, slow)

    def test_channel_mismatch_error(self):
        layer = dec_layer(3, 3)
        with pytest.raises(ConfigError):
            dwconv1d_axis(Tensor(np.zeros((1, 2, 4, 4, 4))), "h", layer)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            dec_layer(2, 4)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        layer = dec_layer(2, 3, seed=8)
        x = Tensor(rng.standard_normal((1, 2, 3, 3, 3)), requires_grad=True)
        params = [x, layer.weight_w, layer.bias_w]
        check_grads(
            lambda: reduce_sum(sigmoid(dwconv1d_axis(x, "w", layer))), params, tol=1e-6
        )


class TestDecomposedBlock:
    def test_zero_weights_give_pure_residual(self):
        layer = dec_layer(3, 7)
        for axis in "hwd":
            layer.axis_weight(axis).data[:] = 0.0
        x = Tensor(np.random.default_rng(2).standard_normal((2, 3, 4, 4, 4)))
        out = decomposed_block(x, layer)
        assert np.array_equal(out.data, x.data)

    @pytest.mark.parametrize("k", [7, 9, 11, 13])
    def test_shape_preserved(self, k):
        layer = dec_layer(2, k)
        x = Tensor(np.random.default_rng(3).standard_normal((1, 2, 8, 8, 8)))
        assert decomposed_block(x, layer).shape == x.shape

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        layer = dec_layer(2, 3, seed=9)
        x = Tensor(rng.standard_normal((1, 2, 5, 5, 5)), requires_grad=True)
        params = [x, layer.weight_h, layer.weight_d, layer.norm_w.scale, layer.norm_h.shift]
        check_grads(lambda: reduce_sum(sigmoid(decomposed_block(x, layer))), params, tol=1e-4)


class TestFullConv:
    def test_delta_kernel_is_identity(self):
        layer = full_layer(2, 3)
        w = np.zeros((2, 3, 3, 3))
        w[:, 1, 1, 1] = 1.0
        layer.weight.data = w
        layer.bias.data[:] = 0.0
        x = Tensor(np.random.default_rng(4).standard_normal((1, 2, 4, 4, 4)))
        assert np.array_equal(full_dwconv3d(x, layer).data, x.data)

    def test_separable_kernel_equals_sequential_axis_convs(self):
        rng = np.random.default_rng(5)
        c, k = 2, 3
        u, v, w = (rng.standard_normal((c, k)) for _ in range(3))
        full = full_layer(c, k)
        full.weight.data = np.einsum("ci,cj,ck->cijk", u, v, w)
        full.bias.data[:] = 0.0

        dec = dec_layer(c, k)
        dec.weight_h.data, dec.weight_w.data, dec.weight_d.data = u, v, w
        for axis in "hwd":
            dec.axis_bias(axis).data[:] = 0.0

        x = Tensor(rng.standard_normal((1, c, 4, 5, 6)))
        seq = dwconv1d_axis(dwconv1d_axis(dwconv1d_axis(x, "h", dec), "w", dec), "d", dec)
        out = full_dwconv3d(x, full)
        assert np.allclose(out.data, seq.data, rtol=0, atol=1e-13)

    def test_matches_naive_reference_exactly(self):
        rng = np.random.default_rng(6)
        layer = full_layer(2, 3, seed=6)
        x = rng.standard_normal((2, 2, 4, 4, 5))
        fast = full_dwconv3d(Tensor(x), layer).data
        slow = naive_full_dwconv3d(x, layer.weight.data, layer.bias.data)
        assert np.allclose(fast, slow, rtol=0, atol=1e-12)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        layer = full_layer(2, 3, seed=10)
        x = Tensor(rng.standard_normal((1, 2, 3, 3, 3)), requires_grad=True)
        check_grads(
            lambda: reduce_sum(sigmoid(full_dwconv3d(x, layer))),
            [x, layer.weight, layer.bias],
            tol=1e-5,
        )

    def test_block_grad(self):
        rng = np.random.default_rng(11)
        layer = full_layer(2, 3, seed=11)
        x = Tensor(rng.standard_normal((1, 2, 4, 4, 4)), requires_grad=True)
        check_grads(
            lambda: reduce_sum(sigmoid(full_dwconv3d_block(x, layer))),
            [x, layer.weight, layer.norm.scale],
            tol=1e-4,
        )


class TestCostModel:
    def test_single_voxel_counts(self):
        shape = (1, 1, 1, 1, 1)
        dec = count_cost(dec_layer(1, 3), shape)
        full = count_cost(full_layer(1, 3), shape)
        assert dec.total_multiply_adds == 9
        assert full.total_multiply_adds == 27

    def test_ratio_at_k13(self):
        shape = (1, 4, 2, 2, 2)
        dec = count_cost(dec_layer(4, 13), shape).total_multiply_adds
        full = count_cost(full_layer(4, 13), shape).total_multiply_adds
        assert full * 39 == dec * 2197
        assert full / dec == pytest.approx(2197 / 39)

    def test_parameter_count_c96_k13(self):
        report = count_cost(dec_layer(96, 13), (1, 96, 2, 2, 2))
        conv_params = sum(
            r.parameters for r in report.records if r.name.startswith("dwconv")
        )
        assert conv_params == 96 * 39 + 3 * 96  # 3744 weights + 288 biases

    @pytest.mark.parametrize("k", [3, 5])
    def test_instrumented_counter_matches_model(self, k):
        shape = (2, 2, 3, 3, 4)
        rng = np.random.default_rng(12)
        x = rng.standard_normal(shape)

        dec = dec_layer(2, k, seed=12)
        counter = MultiplyCounter()
        for axis in "hwd":
            naive_dwconv1d_axis(
                x, axis, dec.axis_weight(axis).data, dec.axis_bias(axis).data, counter
            )
        model = count_cost(dec, shape)
        assert counter.count == model.total_multiply_adds

        full = full_layer(2, k, seed=12)
        counter = MultiplyCounter()
        naive_full_dwconv3d(x, full.weight.data, full.bias.data, counter)
        assert counter.count == count_cost(full, shape).total_multiply_adds

    @pytest.mark.parametrize("k", [7, 9, 11, 13])
    def test_decomposed_to_full_ratio_formula(self, k):
        shape = (1, 2, 4, 4, 4)
        dec = count_cost(dec_layer(2, k), shape).total_multiply_adds
        full = count_cost(full_layer(2, k), shape).total_multiply_adds
        assert dec * k ** 3 == full * 3 * k


class TestBenchmark:
    def test_record_ratio_is_k_squared_over_three(self):
        rec = benchmark_pair((1, 2, 6, 6, 6), k=5, repetitions=2)
        assert rec.full_mult_adds * 3 == rec.decomposed_mult_adds * 5 ** 2
        assert rec.mult_add_ratio == pytest.approx(25 / 3)

    @pytest.mark.slow
    def test_timing_monotone_in_k_for_full_conv(self):
        times = [
            benchmark_pair((1, 8, 16, 16, 16), k, repetitions=3).full_median_s
            for k in (3, 7, 11)
        ]
        assert times == sorted(times)
