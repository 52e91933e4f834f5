"""
Test suite for the numpy network kernels.

Usage:
    pytest test_nnkernels.py            # Run all tests
    pytest test_nnkernels.py -k tdc     # Only the deformable convolution tests

How it works:
    Every kernel is checked against a slow loop oracle written first, and
    every backward pass against central finite differences in float64.
    The network tests use a small hourglass model (T=4, 8x8 grid, small
    kernels) so the whole file runs in well under two minutes.
"""
import numpy as np
import pytest

from models import ShapeError, TrainingError, ValidationError
from nnkernels import (
    Conv3DKernel,
    ModelSpec,
    RodnetModel,
    TrainConfig,
    bce_loss,
    conv3d_backward,
    conv3d_forward,
    conv_transpose3d_backward,
    conv_transpose3d_forward,
    inception_backward,
    inception_forward,
    mnet_backward,
    mnet_forward,
    rodnet_forward,
    sgd_train,
    tdc_backward,
    tdc_forward,
)
from nnkernels.conv3d import conv_output_shape, same_padding
from nnkernels.gradcheck import numerical_gradient, relative_error, sample_indices
from nnkernels.inception import inception_branch_channels

TOLERANCE = 1e-4


def random_kernel(rng, c_out, c_in, extents, stride=(1, 1, 1), padding=None):
    return Conv3DKernel(
        weights=rng.standard_normal((c_out, c_in) + tuple(extents)),
        bias=rng.standard_normal(c_out),
        stride=tuple(stride),
        padding=same_padding(extents) if padding is None else tuple(padding),
    )


def conv_oracle(x, kernel):
    """Direct summation y[o, t, h, w] = b[o] + sum over (c, a, b, c') of w * x."""
    p_t, p_h, p_w = kernel.padding
    xp = np.pad(x, ((0, 0), (p_t, p_t), (p_h, p_h), (p_w, p_w)))
    k_t, k_h, k_w = kernel.extents
    s_t, s_h, s_w = kernel.stride
    out = conv_output_shape(x.shape[1:], kernel)
    y = np.zeros((kernel.weights.shape[0],) + out)
    for o in range(y.shape[0]):
        for t in range(out[0]):
            for h in range(out[1]):
                for w in range(out[2]):
                    window = xp[:, t * s_t:t * s_t + k_t, h * s_h:h * s_h + k_h, w * s_w:w * s_w + k_w]
                    y[o, t, h, w] = kernel.bias[o] + np.sum(kernel.weights[o] * window)
    return y


def check_gradients(loss_fn, analytic, arrays, rng, count=12, step=1e-4):
    """Compare analytic gradients with central differences on sampled entries."""
    for name, array in arrays.items():
        idx = sample_indices(array.shape, count, rng)
        numeric = numerical_gradient(loss_fn, array, step=step, indices=idx)
        picked_a = np.array([analytic[name][i] for i in idx])
        picked_n = np.array([numeric[i] for i in idx])
        err = relative_error(picked_a, picked_n)
        assert err < TOLERANCE, f"{name}: relative error {err:.3e}"


class TestConv3D:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 4, 4))
        kernel = random_kernel(rng, 2, 2, (3, 3, 3))
        np.testing.assert_allclose(conv3d_forward(x, kernel), conv_oracle(x, kernel), atol=1e-6)

    def test_strided_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 6, 6))
        kernel = random_kernel(rng, 3, 2, (3, 3, 3), stride=(2, 2, 1))
        np.testing.assert_allclose(conv3d_forward(x, kernel), conv_oracle(x, kernel), atol=1e-6)

    def test_zero_weights_give_bias(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 4))
        kernel = Conv3DKernel(np.zeros((4, 2, 3, 3, 3)), np.arange(4.0), (1, 1, 1), (1, 1, 1))
        y = conv3d_forward(x, kernel)
        assert y.shape == (4, 3, 4, 4)
        for o in range(4):
            assert np.all(y[o] == o)

    def test_delta_kernel_sums_channels(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 5, 5))
        weights = np.zeros((1, 3, 3, 3, 3))
        weights[0, :, 1, 1, 1] = 1.0
        kernel = Conv3DKernel(weights, np.zeros(1), (1, 1, 1), (1, 1, 1))
        np.testing.assert_allclose(conv3d_forward(x, kernel)[0], x.sum(axis=0), atol=1e-12)

    def test_channel_mismatch_names_axis(self):
        rng = np.random.default_rng(5)
        kernel = random_kernel(rng, 2, 3, (3, 3, 3))
        with pytest.raises(ShapeError, match="channel axis"):
            conv3d_forward(np.zeros((2, 3, 4, 4)), kernel)

    def test_zero_grad_gives_zero_gradients(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 4, 4))
        kernel = random_kernel(rng, 2, 2, (3, 3, 3))
        gx, gw, gb = conv3d_backward(x, kernel, np.zeros((2, 3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_single_element_chain_rule(self):
        x = np.array([[[[1.5]]]])
        kernel = Conv3DKernel(np.array([[[[[2.0]]]]]), np.array([0.5]), (1, 1, 1), (0, 0, 0))
        gx, gw, gb = conv3d_backward(x, kernel, np.array([[[[3.0]]]]))
        assert gw.item() == pytest.approx(1.5 * 3.0)
        assert gx.item() == pytest.approx(2.0 * 3.0)
        assert gb.item() == pytest.approx(3.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(10 + seed)
        stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
        x = rng.standard_normal((2, 4, 5, 5))
        kernel = random_kernel(rng, 2, 2, (3, 3, 3), stride=stride)
        out = conv_output_shape(x.shape[1:], kernel)
        g = rng.standard_normal((2,) + out)

        def loss():
            return float(np.sum(conv3d_forward(x, kernel) * g))

        gx, gw, gb = conv3d_backward(x, kernel, g)
        check_gradients(loss, {"x": gx, "w": gw, "b": gb},
                        {"x": x, "w": kernel.weights, "b": kernel.bias}, rng)

    def test_transpose_is_adjoint(self):
        rng = np.random.default_rng(20)
        kernel = Conv3DKernel(rng.standard_normal((3, 2, 4, 4, 4)), np.zeros(2), (2, 2, 2), (1, 1, 1))
        x = rng.standard_normal((3, 2, 3, 3))
        y = conv_transpose3d_forward(x, kernel)
        assert y.shape == (2, 4, 6, 6)
        # <convT(x), z> == <x, conv(z)> with the conv reading the same weights as (C_out, C_in)
        z = rng.standard_normal(y.shape)
        forward_kernel = Conv3DKernel(kernel.weights, np.zeros(3), (2, 2, 2), (1, 1, 1))
        lhs = np.sum(y * z)
        rhs = np.sum(x * conv3d_forward(z, forward_kernel))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.parametrize("stride", [(2, 2, 2), (1, 2, 2)])
    def test_transpose_backward_matches_finite_differences(self, stride):
        rng = np.random.default_rng(21)
        extents = (3 if stride[0] == 1 else 4, 4, 4)
        padding = tuple((k - s) // 2 for k, s in zip(extents, stride))
        kernel = Conv3DKernel(rng.standard_normal((2, 3) + extents), rng.standard_normal(3), stride, padding)
        x = rng.standard_normal((2, 2, 3, 3))
        g = rng.standard_normal(conv_transpose3d_forward(x, kernel).shape)

        def loss():
            return float(np.sum(conv_transpose3d_forward(x, kernel) * g))

        gx, gw, gb = conv_transpose3d_backward(x, kernel, g)
        check_gradients(loss, {"x": gx, "w": gw, "b": gb},
                        {"x": x, "w": kernel.weights, "b": kernel.bias}, rng)


class TestTDC:
    def test_zero_offsets_equal_conv(self):
        rng = np.random.default_rng(30)
        for _ in range(50):
            c_in, c_out = (int(v) for v in rng.integers(1, 4, size=2))
            extents = tuple(int(k) for k in rng.choice([1, 3], size=3))
            stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
            x = rng.standard_normal((c_in, 4, 5, 5))
            kernel = random_kernel(rng, c_out, c_in, extents, stride=stride)
            out = conv_output_shape(x.shape[1:], kernel)
            offsets = np.zeros((2 * kernel.taps,) + out)
            np.testing.assert_allclose(tdc_forward(x, kernel, offsets), conv3d_forward(x, kernel), atol=1e-6)

    def test_integer_range_offset_equals_shifted_conv(self):
        rng = np.random.default_rng(31)
        x = rng.standard_normal((2, 3, 7, 6))
        kernel = random_kernel(rng, 2, 2, (3, 3, 3))
        offsets = np.zeros((2 * kernel.taps, 3, 7, 6))
        offsets[0::2] = 1.0
        shifted = np.zeros_like(x)
        shifted[:, :, :-1] = x[:, :, 1:]
        y = tdc_forward(x, kernel, offsets)
        expected = conv3d_forward(shifted, kernel)
        # rows whose every sample stays inside the grid after the shift
        interior = slice(1, 7 - 2)
        np.testing.assert_allclose(y[:, :, interior], expected[:, :, interior], atol=1e-10)

    def test_half_offset_averages_range_neighbours(self):
        rng = np.random.default_rng(32)
        x = rng.standard_normal((1, 1, 5, 4))
        kernel = Conv3DKernel(np.ones((1, 1, 1, 1, 1)), np.zeros(1), (1, 1, 1), (0, 0, 0))
        offsets = np.zeros((2, 1, 5, 4))
        offsets[0] = 0.5
        y = tdc_forward(x, kernel, offsets)
        np.testing.assert_allclose(y[0, 0, :4], 0.5 * (x[0, 0, :4] + x[0, 0, 1:]), atol=1e-12)
        # the last row averages with an out-of-grid zero
        np.testing.assert_allclose(y[0, 0, 4], 0.5 * x[0, 0, 4], atol=1e-12)

    def test_offset_shape_mismatch(self):
        rng = np.random.default_rng(33)
        kernel = random_kernel(rng, 1, 1, (3, 3, 3))
        with pytest.raises(ShapeError, match="offset field"):
            tdc_forward(np.zeros((1, 2, 4, 4)), kernel, np.zeros((27, 2, 4, 4)))

    def test_zero_grad_gives_zero_gradients(self):
        rng = np.random.default_rng(34)
        x = rng.standard_normal((2, 3, 4, 4))
        kernel = random_kernel(rng, 2, 2, (1, 3, 3))
        offsets = rng.uniform(0.1, 0.4, size=(18, 3, 4, 4))
        gx, gw, gb, goff = tdc_backward(x, kernel, offsets, np.zeros((2, 3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any() and not goff.any()

    def test_constant_input_has_zero_offset_gradient(self):
        rng = np.random.default_rng(35)
        x = np.full((2, 3, 6, 6), 2.5)
        kernel = random_kernel(rng, 2, 2, (3, 3, 3), padding=(1, 0, 0))
        out = conv_output_shape(x.shape[1:], kernel)
        offsets = rng.uniform(0.1, 0.4, size=(2 * kernel.taps,) + out)
        _, _, _, goff = tdc_backward(x, kernel, offsets, rng.standard_normal((2,) + out))
        # the last row and column sample past the grid edge, where the field is no longer constant
        np.testing.assert_allclose(goff[:, :, :-1, :-1], 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(40 + seed)
        x = rng.standard_normal((2, 3, 5, 5))
        kernel = random_kernel(rng, 2, 2, (3, 3, 3))
        offsets = rng.uniform(0.1, 0.4, size=(2 * kernel.taps, 3, 5, 5))
        g = rng.standard_normal((2, 3, 5, 5))

        def loss():
            return float(np.sum(tdc_forward(x, kernel, offsets) * g))

        gx, gw, gb, goff = tdc_backward(x, kernel, offsets, g)
        check_gradients(loss, {"x": gx, "w": gw, "b": gb, "off": goff},
                        {"x": x, "w": kernel.weights, "b": kernel.bias, "off": offsets}, rng)

    def test_kink_rules_differ_only_on_grid_lines(self):
        rng = np.random.default_rng(44)
        x = rng.standard_normal((1, 2, 4, 4))
        kernel = random_kernel(rng, 1, 1, (1, 3, 3))
        g = rng.standard_normal((1, 2, 4, 4))
        on_grid = np.zeros((18, 2, 4, 4))
        _, _, _, zero = tdc_backward(x, kernel, on_grid, g, kink="zero")
        _, _, _, one_sided = tdc_backward(x, kernel, on_grid, g, kink="one_sided")
        assert not zero.any()
        assert one_sided.any()
        off_grid = rng.uniform(0.1, 0.4, size=on_grid.shape)
        _, _, _, a = tdc_backward(x, kernel, off_grid, g, kink="zero")
        _, _, _, b = tdc_backward(x, kernel, off_grid, g, kink="one_sided")
        np.testing.assert_array_equal(a, b)


class TestMNet:
    def test_single_chirp_is_conv_response(self):
        rng = np.random.default_rng(50)
        frame = rng.standard_normal((2, 1, 4, 4))
        kernel = random_kernel(rng, 3, 2, (3, 1, 1))
        y = mnet_forward(frame, kernel)
        assert y.shape == (3, 4, 4)
        np.testing.assert_allclose(y, conv3d_forward(frame, kernel)[:, 0], atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 5, 8])
    def test_output_shape(self, n):
        rng = np.random.default_rng(51)
        kernel = random_kernel(rng, 4, 2, (3, 1, 1))
        assert mnet_forward(rng.standard_normal((2, n, 6, 5)), kernel).shape == (4, 6, 5)

    def test_max_over_chirp_responses(self):
        rng = np.random.default_rng(52)
        frame = rng.standard_normal((2, 6, 3, 3))
        kernel = random_kernel(rng, 3, 2, (3, 1, 1))
        oracle = conv_oracle(frame, kernel).max(axis=1)
        np.testing.assert_allclose(mnet_forward(frame, kernel), oracle, atol=1e-10)

    def test_identical_chirps_give_interior_response(self):
        rng = np.random.default_rng(53)
        chirp = rng.standard_normal((2, 1, 3, 3))
        frame = np.repeat(chirp, 5, axis=1)
        kernel = random_kernel(rng, 2, 2, (3, 1, 1))
        responses = conv_oracle(frame, kernel)
        np.testing.assert_allclose(mnet_forward(frame, kernel), responses.max(axis=1), atol=1e-10)
        # interior chirps see identical windows
        np.testing.assert_allclose(responses[:, 1], responses[:, 3], atol=1e-12)

    def test_empty_chirp_axis(self):
        rng = np.random.default_rng(54)
        kernel = random_kernel(rng, 2, 2, (3, 1, 1))
        with pytest.raises(ShapeError, match="chirp axis"):
            mnet_forward(np.zeros((2, 0, 3, 3)), kernel)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(55)
        frame = rng.standard_normal((2, 4, 3, 3))
        kernel = random_kernel(rng, 3, 2, (3, 1, 1))
        g = rng.standard_normal((3, 3, 3))

        def loss():
            return float(np.sum(mnet_forward(frame, kernel) * g))

        gx, gw, gb = mnet_backward(frame, kernel, g)
        check_gradients(loss, {"x": gx, "w": gw, "b": gb},
                        {"x": frame, "w": kernel.weights, "b": kernel.bias}, rng)


class TestInception:
    def test_branch_split(self):
        assert inception_branch_channels(40) == (16, 16, 8)
        with pytest.raises(ShapeError):
            inception_branch_channels(12)

    def test_concatenates_branches(self):
        rng = np.random.default_rng(60)
        x = rng.standard_normal((3, 6, 4, 4))
        kernels = [random_kernel(rng, 8, 3, (length, 3, 3)) for length in (5, 9, 13)]
        y = inception_forward(x, kernels)
        assert y.shape == (24, 6, 4, 4)
        for i, kernel in enumerate(kernels):
            np.testing.assert_allclose(y[8 * i:8 * (i + 1)], conv3d_forward(x, kernel), atol=1e-12)

    def test_zero_input_zero_bias(self):
        rng = np.random.default_rng(61)
        kernels = [random_kernel(rng, 2, 2, (length, 3, 3)) for length in (5, 9, 13)]
        for k in kernels:
            k.bias[:] = 0.0
        assert not inception_forward(np.zeros((2, 4, 3, 3)), kernels).any()

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(62)
        x = rng.standard_normal((2, 4, 3, 3))
        kernels = [random_kernel(rng, c, 2, (length, 3, 3)) for c, length in zip((2, 2, 1), (3, 5, 7))]
        g = rng.standard_normal((5, 4, 3, 3))

        def loss():
            return float(np.sum(inception_forward(x, kernels) * g))

        gx, branch = inception_backward(x, kernels, g)
        analytic = {"x": gx}
        arrays = {"x": x}
        for i, (k, (gw, _)) in enumerate(zip(kernels, branch)):
            analytic[f"w{i}"] = gw
            arrays[f"w{i}"] = k.weights
        check_gradients(loss, analytic, arrays, rng)


class TestBCE:
    def test_perfect_prediction(self):
        target = np.array([0.0, 1.0, 1.0, 0.0]).reshape(1, 1, 2, 2)
        loss, _ = bce_loss(target.copy(), target)
        assert loss / target.size < 1e-5

    def test_half_is_ln2(self):
        maps = np.full((3, 2, 4, 4), 0.5)
        loss, _ = bce_loss(maps, maps)
        assert loss == pytest.approx(np.log(2.0) * maps.size)
        mean, _ = bce_loss(maps, maps, reduction="mean")
        assert mean == pytest.approx(np.log(2.0))

    def test_matches_loop_oracle_and_finite_differences(self):
        rng = np.random.default_rng(70)
        pred = rng.uniform(0.1, 0.9, size=(3, 2, 3, 3))
        target = rng.uniform(0.0, 1.0, size=pred.shape)
        oracle = 0.0
        for idx in np.ndindex(*pred.shape):
            p, t = pred[idx], target[idx]
            oracle -= t * np.log(p) + (1 - t) * np.log(1 - p)
        loss, grad = bce_loss(pred, target)
        assert loss == pytest.approx(oracle, rel=1e-10)
        numeric = numerical_gradient(lambda: bce_loss(pred, target)[0], pred)
        assert relative_error(grad, numeric) < 1e-5

    def test_errors(self):
        with pytest.raises(ShapeError):
            bce_loss(np.full((1, 1, 2, 2), 0.5), np.zeros((1, 1, 2, 3)))
        with pytest.raises(ValidationError):
            bce_loss(np.full((1, 1, 2, 2), 0.5), np.full((1, 1, 2, 2), 1.5))


def tiny_spec(**overrides) -> ModelSpec:
    params = dict(
        backbone="hourglass", use_mnet=True, use_tdc=True, use_inception=True,
        snippet_length=4, chirps=2, channel_divisor=16, mnet_kernel=3,
        stem_kernel=(3, 3, 3), encoder_kernel=(3, 3, 3), decoder_kernel=(4, 4, 4),
        final_decoder_kernel=(3, 4, 4), head_kernel=(3, 3, 3),
        inception_lengths=(3, 5, 7), inception_channels=80, tdc_kink_gradient="one_sided",
    )
    params.update(overrides)
    return ModelSpec(**params)


def network_loss(model: RodnetModel, snippet, target) -> float:
    probs, _ = model.forward(snippet)
    return float(bce_loss(probs, target)[0])


def activation_pattern(model: RodnetModel, snippet):
    """ReLU masks of every layer plus the M-Net chirp winners."""
    tape = model.forward(snippet)[1][0]
    pattern = [mask for _, mask in tape.values() if mask is not None]
    if model.spec.use_mnet:
        kernel = model.layers["mnet"].kernel
        pattern += [np.argmax(conv3d_forward(snippet[:, t], kernel), axis=1) for t in range(snippet.shape[1])]
    return pattern


def same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class TestRodnet:
    def test_full_size_shape_contract(self):
        model = RodnetModel(ModelSpec(), seed=0)
        snippet = np.random.default_rng(80).standard_normal((2, 16, 8, 32, 32)).astype(np.float32)
        out = rodnet_forward(snippet, model)
        assert out.values.shape == (3, 16, 32, 32)
        assert np.all(out.values > 0.0) and np.all(out.values < 1.0)

    @pytest.mark.parametrize("spec", [
        tiny_spec(),
        tiny_spec(use_inception=False),
        tiny_spec(use_mnet=False, chirps=2),
        tiny_spec(backbone="vanilla", use_inception=False),
        tiny_spec(use_tdc=False),
    ])
    def test_variants_shape_and_range(self, spec):
        model = RodnetModel(spec, seed=1)
        snippet = np.random.default_rng(81).standard_normal((2, 4, spec.input_chirps, 8, 16))
        probs, _ = model.forward(snippet)
        assert probs.shape == (3, 4, 8, 16)
        assert np.all(probs > 0.0) and np.all(probs < 1.0)

    def test_deterministic(self):
        snippet = np.random.default_rng(82).standard_normal((2, 4, 2, 8, 8))
        a, _ = RodnetModel(tiny_spec(), seed=3).forward(snippet)
        b, _ = RodnetModel(tiny_spec(), seed=3).forward(snippet)
        np.testing.assert_array_equal(a, b)

    def test_snippet_length_mismatch(self):
        model = RodnetModel(tiny_spec(), seed=0)
        with pytest.raises(ShapeError, match="time axis"):
            model.forward(np.zeros((2, 8, 2, 8, 8)))

    def test_without_mnet_needs_one_chirp(self):
        model = RodnetModel(tiny_spec(use_mnet=False), seed=0)
        with pytest.raises(ShapeError, match="chirp axis"):
            model.forward(np.zeros((2, 4, 2, 8, 8)))

    @pytest.mark.parametrize("backbone", ["hourglass", "vanilla"])
    def test_composed_backward_matches_finite_differences(self, backbone):
        spec = tiny_spec(backbone=backbone, use_inception=backbone == "hourglass", float64=True)
        model = RodnetModel(spec, seed=5)
        # keep every deformable sample off the integer grid lines
        for name in ("stem1", "stem2"):
            layer = model.layers[name]
            layer.offset_kernel.bias[:] = 0.25
            layer.offset_kernel.weights[:] = np.random.default_rng(6).uniform(
                -5e-4, 5e-4, size=layer.offset_kernel.weights.shape)
        rng = np.random.default_rng(7)
        snippet = rng.standard_normal((2, 4, 2, 8, 8))
        target = rng.uniform(0.0, 1.0, size=(3, 4, 8, 8))

        probs, cache = model.forward(snippet)
        _, grad_probs = bce_loss(probs, target)
        _, grads = model.backward(cache, grad_probs)
        params = model.parameters()
        assert set(grads) == set(params)

        step = 1e-4
        checked = skipped = 0
        for name, array in params.items():
            for idx in sample_indices(array.shape, 3, rng):
                original = array[idx]
                base = activation_pattern(model, snippet)
                array[idx] = original + step
                f_plus, plus = network_loss(model, snippet, target), activation_pattern(model, snippet)
                array[idx] = original - step
                f_minus, minus = network_loss(model, snippet, target), activation_pattern(model, snippet)
                array[idx] = original
                if not (same_pattern(base, plus) and same_pattern(base, minus)):
                    # a ReLU or chirp max switched inside the stencil
                    skipped += 1
                    continue
                numeric = (f_plus - f_minus) / (2.0 * step)
                err = relative_error(np.array([grads[name][idx]]), np.array([numeric]))
                assert err < TOLERANCE, f"{name}{idx}: relative error {err:.3e}"
                checked += 1
        assert checked >= 0.9 * (checked + skipped)

    def test_parameters_round_trip_through_load(self):
        a = RodnetModel(tiny_spec(), seed=1)
        b = RodnetModel(tiny_spec(), seed=2)
        b.load_parameters(a.parameters())
        snippet = np.random.default_rng(83).standard_normal((2, 4, 2, 8, 8))
        np.testing.assert_array_equal(a.forward(snippet)[0], b.forward(snippet)[0])

    def test_load_rejects_wrong_shapes(self):
        a = RodnetModel(tiny_spec(), seed=1)
        b = RodnetModel(tiny_spec(use_inception=False), seed=1)
        with pytest.raises(ShapeError):
            b.load_parameters(a.parameters())


def overfit_sample(spec: ModelSpec):
    """One snippet whose input carries a bright blob where the single target object sits."""
    rng = np.random.default_rng(90)
    snippet = 0.1 * rng.standard_normal((2, spec.snippet_length, spec.input_chirps, 8, 8))
    target = np.zeros((3, spec.snippet_length, 8, 8))
    for t in range(spec.snippet_length):
        row, col = 2 + t % 3, 5 - t % 2
        snippet[:, t, :, row, col] += 3.0
        target[0, t, row, col] = 1.0
    return snippet.astype(np.float32), target.astype(np.float32)


class TestTraining:
    def test_zero_learning_rate_keeps_weights(self):
        model = RodnetModel(tiny_spec(), seed=0)
        sample = overfit_sample(model.spec)
        result = sgd_train([sample], model, TrainConfig(lr=0.0, epochs=3, progress=False))
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(result.model.parameters()[name], value)

    def test_empty_dataset(self):
        with pytest.raises(TrainingError):
            sgd_train([], RodnetModel(tiny_spec(), seed=0), TrainConfig(progress=False))

    def test_non_finite_loss_stops_training(self):
        model = RodnetModel(tiny_spec(), seed=0)
        snippet, target = overfit_sample(model.spec)
        snippet[:, 0, :, 2, 5] = np.nan
        with pytest.raises(TrainingError, match="non-finite"):
            sgd_train([(snippet, target)], model, TrainConfig(epochs=1, progress=False))

    def test_same_seed_same_history(self):
        model = RodnetModel(tiny_spec(), seed=0)
        rng = np.random.default_rng(91)
        data = [(rng.standard_normal((2, 4, 2, 8, 8)).astype(np.float32),
                 rng.uniform(0, 1, size=(3, 4, 8, 8)).astype(np.float32)) for _ in range(3)]
        config = TrainConfig(lr=1e-3, epochs=2, seed=4, progress=False)
        a = sgd_train(data, model, config)
        b = sgd_train(data, model, config)
        assert a.loss_history == b.loss_history
        assert len(a.loss_history) == 6

    def test_single_sample_overfit(self):
        model = RodnetModel(tiny_spec(), seed=0)
        sample = overfit_sample(model.spec)
        result = sgd_train([sample], model, TrainConfig(lr=1.0, epochs=500, reduction="mean", progress=False))
        history = result.loss_history
        assert len(history) == 500
        assert history[-1] < 0.1 * history[0]
        for start in range(0, 450, 50):
            assert history[start + 50] < history[start]
