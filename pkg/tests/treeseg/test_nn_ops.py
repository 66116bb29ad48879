import numpy as np
import pytest

from src.treeseg.domain.errors import ShapeMismatchError, UnsupportedConfigurationError
from src.treeseg.domain.gradcheck import op_gradcheck
from src.treeseg.domain.nn_ops import ConvSpec, ParamSet, conv2d, conv3d, maxpool2d, transposed_conv2d
from src.treeseg.domain.tensor import Tensor, precision


def _params_for(spec, seed=0):
    params = ParamSet()
    params.add_conv(spec, np.random.default_rng(seed))
    return params


def _conv_fn(spec):
    def fn(x, w, b):
        params = ParamSet()
        params._params[f"{spec.name}.weight"] = w
        params._params[f"{spec.name}.bias"] = b
        return conv2d(x, spec, params) if spec.spatial_rank == 2 else conv3d(x, spec, params)

    return fn


class TestConvSpec:
    def test_output_size(self):
        spec = ConvSpec("c", 3, 8, (3, 3), (1, 1))
        assert spec.output_size((10, 12)) == (10, 12)
        assert ConvSpec("c", 3, 8, (3, 3), (0, 0)).output_size((10, 12)) == (8, 10)

    def test_rank_mismatch_is_rejected(self):
        with pytest.raises(UnsupportedConfigurationError):
            ConvSpec("c", 3, 8, (3, 3), (1,))

    def test_non_positive_channels_are_rejected(self):
        with pytest.raises(UnsupportedConfigurationError):
            ConvSpec("c", 0, 8, (3, 3), (1, 1))


class TestConv2d:
    def test_identity_kernel_reproduces_input(self):
        spec = ConvSpec("id", 1, 1, (3, 3), (1, 1))
        params = _params_for(spec)
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        params["id.weight"].data[:] = kernel
        x = np.random.default_rng(0).normal(size=(1, 1, 5, 5)).astype(np.float32)

        out = conv2d(Tensor(x), spec, params)

        np.testing.assert_allclose(out.data, x, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_direct_sum(self, seed):
        rng = np.random.default_rng(seed)
        kernel = tuple(int(k) for k in rng.integers(1, 4, size=2))
        padding = tuple(int(rng.integers(0, k)) for k in kernel)
        spec = ConvSpec("c", int(rng.integers(1, 5)), int(rng.integers(1, 5)), kernel, padding)
        height, width = (int(rng.integers(k, 9)) for k in kernel)
        with precision(np.float64):
            params = _params_for(spec, seed)
            params["c.bias"].data[:] = rng.normal(size=spec.out_channels)
            x = rng.normal(size=(2, spec.in_channels, height, width))
            out = conv2d(Tensor(x), spec, params).data

        w = params["c.weight"].data
        b = params["c.bias"].data
        (kh, kw), (ph, pw) = kernel, padding
        padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        oh, ow = padded.shape[2] - kh + 1, padded.shape[3] - kw + 1
        expected = np.zeros((2, spec.out_channels, oh, ow))
        for n in range(2):
            for o in range(spec.out_channels):
                for i in range(oh):
                    for j in range(ow):
                        expected[n, o, i, j] = (padded[n, :, i : i + kh, j : j + kw] * w[o]).sum() + b[o]
        assert out.shape == expected.shape == (2, spec.out_channels) + spec.output_size((height, width))
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        spec = ConvSpec("g", 2, 3, (3, 3), (1, 1))
        rng = np.random.default_rng(2)
        error = op_gradcheck(
            _conv_fn(spec),
            rng.normal(size=(1, 2, 4, 4)),
            rng.normal(size=spec.weight_shape),
            rng.normal(size=(3,)),
        )
        assert error < 1e-6

    def test_wrong_channel_count_names_layer(self):
        spec = ConvSpec("enc.conv1", 3, 4, (3, 3), (1, 1))
        params = _params_for(spec)
        with pytest.raises(ShapeMismatchError) as exc:
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), spec, params)
        assert "enc.conv1" in str(exc.value)

    def test_stride_other_than_one_is_unsupported(self):
        spec = ConvSpec("s", 1, 1, (3, 3), (1, 1), stride=2)
        with pytest.raises(UnsupportedConfigurationError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), spec, _params_for(spec))


class TestConv3d:
    def test_temporal_axis_collapses(self):
        spec = ConvSpec("t", 3, 5, (3, 3, 3), (0, 1, 1))
        out = conv3d(Tensor(np.zeros((2, 3, 4, 6, 6))), spec, _params_for(spec))
        assert out.shape == (2, 5, 2, 6, 6)

    def test_gradients_match_finite_differences(self):
        spec = ConvSpec("g3", 2, 2, (2, 3, 3), (0, 1, 1))
        rng = np.random.default_rng(3)
        error = op_gradcheck(
            _conv_fn(spec),
            rng.normal(size=(1, 2, 3, 3, 3)),
            rng.normal(size=spec.weight_shape),
            rng.normal(size=(2,)),
        )
        assert error < 1e-6

    def test_temporal_axis_shorter_than_kernel(self):
        spec = ConvSpec("short", 3, 2, (3, 3, 3), (0, 1, 1))
        with pytest.raises(ShapeMismatchError):
            conv3d(Tensor(np.zeros((1, 3, 2, 4, 4))), spec, _params_for(spec))


class TestTransposedConv:
    def test_doubles_spatial_size(self):
        spec = ConvSpec("up", 4, 2, (2, 2), (0, 0), stride=2)
        out = transposed_conv2d(Tensor(np.ones((1, 4, 3, 5))), spec, _params_for(spec))
        assert out.shape == (1, 2, 6, 10)

    def test_gradients_match_finite_differences(self):
        spec = ConvSpec("up", 2, 3, (2, 2), (0, 0), stride=2)
        rng = np.random.default_rng(4)

        def fn(x, w, b):
            params = ParamSet()
            params._params["up.weight"] = w
            params._params["up.bias"] = b
            return transposed_conv2d(x, spec, params)

        error = op_gradcheck(
            fn,
            rng.normal(size=(1, 2, 2, 3)),
            rng.normal(size=spec.weight_shape),
            rng.normal(size=(3,)),
        )
        assert error < 1e-6

    def test_other_kernels_are_unsupported(self):
        spec = ConvSpec("up", 2, 2, (3, 3), (0, 0), stride=2)
        with pytest.raises(UnsupportedConfigurationError):
            transposed_conv2d(Tensor(np.ones((1, 2, 2, 2))), spec, _params_for(spec))


class TestMaxPool:
    def test_picks_window_maximum(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = maxpool2d(Tensor(x))
        np.testing.assert_allclose(out.data[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_ties_route_gradient_to_first_in_row_major_order(self):
        with precision(np.float64):
            x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
            maxpool2d(x).sum().backward()
        np.testing.assert_allclose(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_odd_size_is_rejected(self):
        with pytest.raises(ShapeMismatchError):
            maxpool2d(Tensor(np.ones((1, 1, 3, 4))))


class TestParamSet:
    def test_add_conv_registers_weight_and_bias(self):
        spec = ConvSpec("layer", 3, 4, (3, 3), (1, 1))
        params = _params_for(spec)
        assert params.names() == ("layer.weight", "layer.bias")
        assert params.count() == 4 * 3 * 9 + 4

    def test_state_dict_round_trip(self):
        spec = ConvSpec("layer", 1, 2, (3, 3), (1, 1))
        source = _params_for(spec, seed=0)
        target = _params_for(spec, seed=1)
        target.load_state_dict(source.state_dict())
        np.testing.assert_array_equal(target["layer.weight"].data, source["layer.weight"].data)

    def test_load_rejects_unknown_names(self):
        params = _params_for(ConvSpec("layer", 1, 2, (3, 3), (1, 1)))
        state = params.state_dict()
        state["extra.weight"] = np.zeros(1)
        with pytest.raises(ValueError, match="extra.weight"):
            params.load_state_dict(state)

    def test_load_rejects_wrong_shape(self):
        params = _params_for(ConvSpec("layer", 1, 2, (3, 3), (1, 1)))
        state = params.state_dict()
        state["layer.bias"] = np.zeros(3)
        with pytest.raises(ShapeMismatchError):
            params.load_state_dict(state)

    def test_duplicate_name_is_rejected(self):
        params = ParamSet()
        params.add("w", np.zeros(2))
        with pytest.raises(ValueError):
            params.add("w", np.zeros(2))
