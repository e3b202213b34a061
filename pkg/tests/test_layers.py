import numpy as np
import pytest

from sysident import Rng
from sysident.errors import DataError, DimensionError, ParameterError
from sysident.gradcheck import check_model_gradients, numerical_gradient, relative_error
from sysident.layers import (Activation, BatchNorm, CausalConv1d, Dense,
                             Dropout, ResidualBlock, weight_norm_backward,
                             weight_norm_forward)

GRAD_TOL = 1e-6


def away_from_zero(rng, shape, margin=0.2):
    """Random values with |x| >= margin, so relu probes never cross the kink."""
    x = rng.gaussian(shape)
    return np.sign(x) * (np.abs(x) + margin)


class TestCausalConv:
    def test_identity_kernel(self):
        conv = CausalConv1d(1, 1, 1, 1, Rng(0))
        conv.params["W"][...] = 1.0
        conv.params["b"][...] = 0.0
        x = Rng(1).gaussian((2, 1, 7))
        assert np.array_equal(conv.forward(x), x)

    def test_two_tap_kernel(self):
        # naive loop oracle: out[t] = x[t] + x[t-1] -> [1, 3, 5]
        conv = CausalConv1d(1, 1, 2, 1, Rng(0))
        conv.params["W"][0, 0] = [1.0, 1.0]
        conv.params["b"][...] = 0.0
        out = conv.forward(np.array([[[1.0, 2.0, 3.0]]]))
        assert np.allclose(out, [[[1.0, 3.0, 5.0]]])

    def test_dilated_kernel(self):
        # out[t] = x[t] + x[t-2] -> [1, 2, 4, 6]
        conv = CausalConv1d(1, 1, 2, 2, Rng(0))
        conv.params["W"][0, 0] = [1.0, 1.0]
        conv.params["b"][...] = 0.0
        out = conv.forward(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        assert np.allclose(out, [[[1.0, 2.0, 4.0, 6.0]]])

    def test_matches_naive_loop_oracle(self):
        rng = Rng(3)
        for dilation in (1, 2, 3):
            conv = CausalConv1d(2, 3, 3, dilation, rng)
            x = rng.gaussian((2, 2, 12))
            out = conv.forward(x)
            w, b = conv.params["W"], conv.params["b"]
            expected = np.zeros_like(out)
            for bt in range(2):
                for co in range(3):
                    for t in range(12):
                        acc = b[co]
                        for ci in range(2):
                            for i in range(3):
                                tau = t - i * dilation
                                if tau >= 0:
                                    acc += w[co, ci, i] * x[bt, ci, tau]
                        expected[bt, co, t] = acc
            assert np.allclose(out, expected, rtol=1e-12)

    def test_zero_upstream_gives_zero_grads(self):
        conv = CausalConv1d(2, 2, 2, 1, Rng(0))
        out = conv.forward(Rng(1).gaussian((1, 2, 5)))
        dx = conv.backward(np.zeros_like(out))
        assert not dx.any()
        assert not conv.grads["W"].any() and not conv.grads["b"].any()

    def test_identity_kernel_adjoint(self):
        conv = CausalConv1d(1, 1, 1, 1, Rng(0))
        conv.params["W"][...] = 1.0
        conv.forward(Rng(1).gaussian((2, 1, 6)))
        g = Rng(2).gaussian((2, 1, 6))
        assert np.array_equal(conv.backward(g), g)

    @pytest.mark.parametrize("dilation,weight_norm", [(1, False), (2, False), (1, True)])
    def test_backward_matches_finite_differences(self, dilation, weight_norm):
        conv = CausalConv1d(2, 3, 2, dilation, Rng(4), weight_norm=weight_norm)
        x = Rng(5).gaussian((2, 2, 8))
        assert check_model_gradients(conv, x) < GRAD_TOL

    def test_output_length_equals_input_length(self):
        conv = CausalConv1d(1, 4, 5, 3, Rng(0))
        assert conv.forward(Rng(1).gaussian((1, 1, 17))).shape == (1, 4, 17)

    def test_first_output_depends_on_first_input_and_bias_only(self):
        conv = CausalConv1d(2, 3, 4, 2, Rng(6))
        x = Rng(7).gaussian((1, 2, 9))
        base = conv.forward(x.copy())
        probed = x.copy()
        probed[:, :, 1:] += 5.0     # everything except input[0]
        assert np.array_equal(conv.forward(probed)[:, :, 0], base[:, :, 0])

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            CausalConv1d(1, 1, 0, 1, Rng(0))
        with pytest.raises(ParameterError):
            CausalConv1d(1, 1, 2, 0, Rng(0))

    def test_shape_errors(self):
        conv = CausalConv1d(2, 1, 2, 1, Rng(0))
        with pytest.raises(DimensionError):
            conv.forward(np.zeros((1, 3, 5)))
        conv.forward(np.zeros((1, 2, 5)))
        with pytest.raises(DimensionError):
            conv.backward(np.zeros((1, 1, 4)))


class TestDense:
    def test_identity(self):
        d = Dense(3, 3, Rng(0))
        d.params["W"][...] = np.eye(3)
        d.params["b"][...] = 0.0
        x = Rng(1).gaussian((4, 3))
        assert np.array_equal(d.forward(x), x)

    def test_bias_broadcast(self):
        d = Dense(3, 1, Rng(0))
        d.params["W"][...] = 0.0
        d.params["b"][...] = 5.0
        out = d.forward(Rng(1).gaussian((4, 3)))
        assert np.array_equal(out, np.full((4, 1), 5.0))

    def test_backward_matches_finite_differences(self):
        d = Dense(4, 3, Rng(2))
        assert check_model_gradients(d, Rng(3).gaussian((5, 4))) < GRAD_TOL

    def test_weight_norm_backward(self):
        d = Dense(4, 3, Rng(4), weight_norm=True)
        assert check_model_gradients(d, Rng(5).gaussian((5, 4))) < GRAD_TOL


class TestActivations:
    def test_relu_sign_cases(self):
        act = Activation("relu")
        assert np.array_equal(act.forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_symmetry_points(self):
        assert Activation("sigmoid").forward(np.array([0.0]))[0] == 0.5
        assert Activation("tanh").forward(np.array([0.0]))[0] == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            Activation("softplus")

    @pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
    def test_backward_matches_finite_differences(self, kind):
        act = Activation(kind)
        x = away_from_zero(Rng(6), (3, 7))
        assert check_model_gradients(act, x) < GRAD_TOL

    def test_relu_subgradient_zero_at_zero(self):
        act = Activation("relu")
        act.forward(np.array([0.0, 1.0]))
        assert np.array_equal(act.backward(np.ones(2)), [0.0, 1.0])


class TestDropout:
    def test_p_zero_identity_both_modes(self):
        drop = Dropout(0.0, Rng(0))
        x = Rng(1).gaussian((3, 4))
        assert np.array_equal(drop.forward(x, training=True), x)
        assert np.array_equal(drop.forward(x, training=False), x)

    def test_eval_mode_identity(self):
        drop = Dropout(0.7, Rng(0))
        x = Rng(1).gaussian((3, 4))
        out = drop.forward(x, training=False)
        assert out is x

    def test_training_expectation_matches_input(self):
        drop = Dropout(0.5, Rng(2))
        x = np.array([1.0, -2.0, 3.0, 1.5, -1.0, 2.5, -3.0, 0.8])
        total = np.zeros_like(x)
        n = 10 ** 5
        for _ in range(n):
            total += drop.forward(x, training=True)
        assert np.all(np.abs(total / n - x) < 0.01 * np.abs(x) + 1e-3)

    def test_rate_validation(self):
        with pytest.raises(ParameterError):
            Dropout(1.0, Rng(0))
        with pytest.raises(ParameterError):
            Dropout(-0.1, Rng(0))

    def test_backward_reuses_mask(self):
        drop = Dropout(0.4, Rng(3))
        x = Rng(4).gaussian((6, 5))
        out = drop.forward(x, training=True)
        grad = drop.backward(np.ones_like(x))
        # the same elements are zeroed, survivors share the 1/(1-p) scale
        assert np.array_equal(grad == 0.0, out == 0.0)
        assert np.allclose(grad[grad != 0.0], 1.0 / 0.6)

    def test_backward_matches_finite_differences_with_pinned_mask(self):
        drop = Dropout(0.3, Rng(5))
        x = Rng(6).gaussian((4, 6))
        state = drop.rng.get_state()
        err = check_model_gradients(
            drop, x, rng_state=state,
            restore_rng=lambda s: drop.rng.set_state(s))
        assert err < GRAD_TOL


class TestBatchNorm:
    def test_constant_channel_outputs_beta(self):
        bn = BatchNorm(2)
        bn.params["beta"][...] = 0.7
        x = np.full((3, 2, 5), 4.2)
        out = bn.forward(x, training=True)
        assert np.allclose(out, 0.7, atol=1e-12)

    def test_standardizes_per_channel(self):
        bn = BatchNorm(3)
        # large input scale keeps the epsilon bias below the tolerance
        x = Rng(7).gaussian((4, 3, 50), mean=5.0, std=1000.0)
        out = bn.forward(x, training=True)
        mean = out.mean(axis=(0, 2))
        var = out.var(axis=(0, 2))
        assert np.all(np.abs(mean) < 1e-10)
        assert np.all(np.abs(var - 1.0) < 1e-8)

    def test_single_sample_training_rejected(self):
        bn = BatchNorm(2)
        with pytest.raises(DataError):
            bn.forward(np.zeros((1, 2, 1)), training=True)

    def test_running_stats_drive_eval_mode(self):
        bn = BatchNorm(1)
        rng = Rng(8)
        for _ in range(200):
            bn.forward(rng.gaussian((4, 1, 25), mean=3.0, std=2.0), training=True)
        x = rng.gaussian((2, 1, 10), mean=3.0, std=2.0)
        out = bn.forward(x, training=False)
        manual = (x - bn.running_mean[None, :, None]) / np.sqrt(
            bn.running_var[None, :, None] + bn.eps)
        assert np.allclose(out, manual)
        assert abs(bn.running_mean[0] - 3.0) < 0.2
        assert abs(bn.running_var[0] - 4.0) < 0.5

    @pytest.mark.parametrize("training", [True, False])
    def test_backward_matches_finite_differences(self, training):
        bn = BatchNorm(3)
        bn.params["gamma"][...] = Rng(9).gaussian(3, mean=1.0, std=0.2)
        bn.params["beta"][...] = Rng(10).gaussian(3)
        if not training:
            bn.running_mean[...] = Rng(11).gaussian(3)
            bn.running_var[...] = 1.0 + Rng(12).gaussian(3) ** 2
        x = Rng(13).gaussian((4, 3, 6))
        assert check_model_gradients(bn, x, training=training) < GRAD_TOL


class TestWeightNorm:
    def test_neutral_reparametrization(self):
        v = Rng(14).gaussian((3, 5))
        g = np.sqrt(np.sum(v * v, axis=1))
        assert np.array_equal(weight_norm_forward(v, g), v)

    def test_direction_scale_invariance(self):
        v = Rng(15).gaussian((3, 5))
        g = Rng(16).gaussian(3) ** 2 + 0.5
        w1 = weight_norm_forward(v, g)
        w2 = weight_norm_forward(10.0 * v, g)
        assert np.allclose(w1, w2, rtol=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(ParameterError):
            weight_norm_forward(np.zeros((2, 3)), np.ones(2))

    def test_gradients_match_finite_differences(self):
        rng = Rng(17)
        v = rng.gaussian((3, 4))
        g = rng.gaussian(3) ** 2 + 0.5
        proj = rng.gaussian((3, 4))

        def objective():
            return float(np.sum(weight_norm_forward(v, g) * proj))

        d_v, d_g = weight_norm_backward(v, g, proj)
        assert relative_error(d_v, numerical_gradient(objective, v)) < GRAD_TOL
        assert relative_error(d_g, numerical_gradient(objective, g)) < GRAD_TOL


class TestResidualBlock:
    def _zero_body(self, block):
        for conv in (block.conv1, block.conv2):
            for grad_name in ("W", "v"):
                if grad_name in conv.params:
                    conv.params[grad_name][...] = 0.0
            conv.params["b"][...] = 0.0

    def test_pure_skip_when_body_is_zero(self):
        block = ResidualBlock(3, 3, 2, 1, norm="none", activation="relu", rng=Rng(18))
        self._zero_body(block)
        x = Rng(19).gaussian((2, 3, 6))
        assert np.array_equal(block.forward(x), x)

    def test_channel_projection_skip(self):
        block = ResidualBlock(2, 3, 2, 1, norm="none", activation="relu", rng=Rng(20))
        self._zero_body(block)
        block.skip.params["W"][...] = 0.0
        block.skip.params["W"][0, 0, 0] = 1.0   # row 0 picks channel 0
        block.skip.params["W"][1, 1, 0] = 1.0   # row 1 picks channel 1
        block.skip.params["b"][...] = 0.0
        x = Rng(21).gaussian((2, 2, 5))
        out = block.forward(x)
        # composed by hand: skip rows select channels, third row stays zero
        assert np.array_equal(out[:, 0], x[:, 0])
        assert np.array_equal(out[:, 1], x[:, 1])
        assert np.array_equal(out[:, 2], np.zeros_like(out[:, 2]))

    @pytest.mark.parametrize("norm", ["none", "batch", "weight"])
    def test_backward_matches_finite_differences(self, norm):
        block = ResidualBlock(2, 3, 2, 2, norm=norm, activation="tanh", rng=Rng(22))
        x = Rng(23).gaussian((2, 2, 7))
        assert check_model_gradients(block, x, training=True) < GRAD_TOL

    def test_causality_is_bitwise(self):
        block = ResidualBlock(2, 4, 3, 2, norm="none", activation="tanh", rng=Rng(24))
        x = Rng(25).gaussian((1, 2, 12))
        base = block.forward(x.copy())
        probed = x.copy()
        probed[:, :, 7] += 3.0
        out = block.forward(probed)
        assert np.array_equal(out[:, :, :7], base[:, :, :7])
        assert not np.array_equal(out[:, :, 7:], base[:, :, 7:])


def test_delay_commutes_with_static_nonlinearity():
    # shifting then applying the activation equals applying then shifting
    rng = Rng(26)
    z = rng.gaussian(40)
    for kind in ("relu", "sigmoid", "tanh"):
        act = Activation(kind)
        for s in (1, 3, 7):
            shifted_then_act = act.apply(np.concatenate([np.zeros(s), z]))
            act_then_shifted = np.concatenate([act.apply(np.zeros(s)), act.apply(z)])
            assert np.array_equal(shifted_then_act, act_then_shifted)
