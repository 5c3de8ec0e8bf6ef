"""Reverse-mode engine: forward/backward correctness, saliency seeding,
optimizer step, smoothness bound, and network persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_diff_gradients, max_rel_error, random_small_net
from structgrad.engine import (
    Activation,
    Conv2d,
    Dense,
    Flatten,
    Network,
    NonSmoothNetworkError,
    ShapeError,
    backward,
    forward,
    input_saliency,
    load_network,
    make_convnet,
    make_mlp,
    parameter_vector,
    save_network,
    sgd_step,
    smoothness_bound,
    softmax,
)
from structgrad.rng import make_rng
from structgrad.tensorio import TensorFormatError


def identity_dense_net():
    return Network([Dense(np.eye(2), np.zeros(2))], 2)


class TestForward:
    def test_symmetric_input_gives_uniform_probs(self):
        logits, probs = forward(identity_dense_net(), np.zeros(2))
        assert np.allclose(logits, 0.0)
        assert np.allclose(probs, [0.5, 0.5])

    def test_closed_form_softmax(self):
        _, probs = forward(identity_dense_net(), np.array([10.0, 0.0]))
        expected = np.array([1.0, math.exp(-10.0)]) / (1.0 + math.exp(-10.0))
        assert np.allclose(probs, expected, atol=1e-15)

    def test_probs_normalized(self, small_convnet):
        x = make_rng(1, 0).random((1, 12, 12))
        _, probs = forward(small_convnet, x)
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert np.all(probs > 0)

    def test_shape_mismatch_names_layer(self):
        net = Network([Flatten(), Dense(np.eye(3), np.zeros(3))], 3)
        with pytest.raises(ShapeError, match="layer 1 .*Dense"):
            forward(net, np.ones(5))

    def test_conv_shape_mismatch_rejected(self):
        net = Network([Conv2d(np.zeros((2, 3, 3, 3)), np.zeros(2))], 2)
        with pytest.raises(ShapeError):
            forward(net, np.ones((1, 8, 8)))

    @given(st.integers(0, 2**31), st.floats(-50, 50))
    @settings(max_examples=50, deadline=None)
    def test_softmax_shift_invariance(self, seed, shift):
        logits = make_rng(seed, 0).uniform(-10, 10, size=5)
        assert np.allclose(softmax(logits), softmax(logits + shift), atol=1e-10)


class TestBackward:
    def test_linear_softmax_input_gradient(self):
        w = np.array([[1.0, -2.0], [0.5, 3.0], [-1.0, 0.0]])
        net = Network([Dense(w, np.zeros(3))], 3)
        x = np.array([0.3, -0.7])
        logits, probs = forward(net, x)
        grads = backward(net, x, 1)
        expected = (probs - np.eye(3)[1]) @ w
        assert np.allclose(grads.input_grad, expected, atol=1e-12)
        assert abs(grads.loss_value + math.log(probs[1])) < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_gradients_match_finite_differences(self, seed):
        net, shape = random_small_net(seed)
        x = make_rng(seed, 91).random(shape)
        base, param_fd, input_fd = finite_diff_gradients(net, x, seed % net.class_count)
        assert max_rel_error(base.input_grad, input_fd) <= 1e-5
        for pg, fd in zip(base.param_grads, param_fd):
            if fd is None:
                continue
            for a, n in zip(pg, fd):
                assert max_rel_error(a, n) <= 1e-5

    def test_zero_weight_network_zero_input_grad(self):
        net = Network([Dense(np.zeros((2, 4)), np.zeros(2))], 2)
        grads = backward(net, np.ones(4), 0)
        assert np.all(grads.input_grad == 0.0)

    def test_label_out_of_range(self, small_mlp):
        with pytest.raises(ValueError, match="out of range"):
            backward(small_mlp, np.zeros(8), 3)

    def test_gradient_shapes_match(self, small_convnet):
        x = make_rng(2, 0).random((1, 12, 12))
        grads = backward(small_convnet, x, 0)
        assert grads.input_grad.shape == x.shape
        for layer, pg in zip(small_convnet.layers, grads.param_grads):
            if layer.params():
                for p, g in zip(layer.params(), pg):
                    assert g.shape == p.shape


class TestInputSaliency:
    def test_logit_mode_linear_model_gives_weight_row(self):
        w = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
        net = Network([Dense(w, np.zeros(2))], 2)
        sal = input_saliency(net, np.array([0.1, 0.2, 0.3]), 1, on_logits=True)
        assert np.allclose(sal, w[1], atol=1e-15)

    @pytest.mark.parametrize("seed", range(4))
    def test_collinear_with_loss_gradient(self, seed):
        net, shape = random_small_net(seed)
        x = make_rng(seed, 92).random(shape)
        y = seed % net.class_count
        sal = input_saliency(net, x, y).reshape(-1)
        lg = backward(net, x, y).input_grad.reshape(-1)
        cos = sal @ lg / (np.linalg.norm(sal) * np.linalg.norm(lg))
        assert abs(cos + 1.0) <= 1e-9

    def test_zero_net_zero_map(self):
        net = Network([Dense(np.zeros((2, 4)), np.zeros(2))], 2)
        assert np.all(input_saliency(net, np.ones(4), 0) == 0.0)

    def test_class_out_of_range(self, small_mlp):
        with pytest.raises(ValueError):
            input_saliency(small_mlp, np.zeros(8), 5)


class TestSgdStep:
    def test_zero_lr_unchanged(self, small_mlp):
        grads = backward(small_mlp, np.ones(8), 0)
        stepped = sgd_step(small_mlp, grads, 0.0)
        assert np.array_equal(parameter_vector(stepped), parameter_vector(small_mlp))

    def test_scalar_arithmetic(self):
        net = Network([Dense(np.array([[1.0]]), np.zeros(1))], 1)
        grads = [(np.array([[2.0]]), np.zeros(1))]
        stepped = sgd_step(net, grads, 0.1)
        assert stepped.layers[0].weights[0, 0] == pytest.approx(0.8, abs=0)

    def test_deterministic(self, small_mlp):
        grads = backward(small_mlp, np.ones(8), 1)
        a = sgd_step(small_mlp, grads, 0.3)
        b = sgd_step(small_mlp, grads, 0.3)
        assert np.array_equal(parameter_vector(a), parameter_vector(b))

    def test_negative_lr_rejected(self, small_mlp):
        with pytest.raises(ValueError):
            sgd_step(small_mlp, backward(small_mlp, np.ones(8), 0), -0.1)


class TestSmoothness:
    def test_relu_rejected(self):
        net = make_mlp(make_rng(0, 0), 4, [3], 2, "relu")
        with pytest.raises(NonSmoothNetworkError):
            smoothness_bound(net, (4,))

    def test_softplus_bound_positive_finite(self, small_convnet):
        lam = smoothness_bound(small_convnet, (1, 12, 12))
        assert np.isfinite(lam) and lam > 0

    def test_linear_network_bound_is_quadratic_head_only(self):
        w = np.array([[2.0, 0.0], [0.0, 1.0]])
        net = Network([Dense(w, np.zeros(2))], 2)
        lam = smoothness_bound(net, (2,))
        # no activations: curvature term vanishes, bound = 0.5 * opnorm^2
        assert lam == pytest.approx(0.5 * 4.0, rel=1e-12)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path, small_convnet):
        path = tmp_path / "net.sgnet"
        save_network(path, small_convnet)
        loaded = load_network(path)
        assert np.array_equal(parameter_vector(loaded), parameter_vector(small_convnet))
        assert loaded.class_count == small_convnet.class_count
        for a, b in zip(loaded.layers, small_convnet.layers):
            assert type(a) is type(b)

    def test_truncated_file_rejected(self, tmp_path, small_mlp):
        path = tmp_path / "net.sgnet"
        save_network(path, small_mlp)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(TensorFormatError, match="truncated"):
            load_network(path)

    def test_wrong_magic_rejected(self, tmp_path, small_mlp):
        path = tmp_path / "net.sgnet"
        save_network(path, small_mlp)
        blob = path.read_bytes()
        path.write_bytes(b"XXNET1\n\0" + blob[8:])
        with pytest.raises(TensorFormatError, match="magic"):
            load_network(path)

    def test_trailing_bytes_rejected(self, tmp_path, small_mlp):
        path = tmp_path / "net.sgnet"
        save_network(path, small_mlp)
        path.write_bytes(path.read_bytes() + b"\0" * 8)
        with pytest.raises(TensorFormatError, match="trailing"):
            load_network(path)

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "net.sgnet"
        path.write_bytes(b"SGNET1\n\0" + b"{not json\n")
        with pytest.raises(TensorFormatError, match="corrupt"):
            load_network(path)


class TestConstruction:
    def test_convnet_forward_shape(self):
        net = make_convnet(make_rng(0, 0), (1, 32, 32), 4)
        logits, probs = forward(net, np.zeros((1, 32, 32)))
        assert logits.shape == (4,)

    def test_mlp_layer_count(self):
        net = make_mlp(make_rng(0, 0), 10, [8, 6], 3)
        kinds = [type(l).__name__ for l in net.layers]
        assert kinds == ["Flatten", "Dense", "Activation", "Dense", "Activation", "Dense"]

    def test_conv_stride_one_same_padding_preserves_shape(self):
        layer = Conv2d(make_rng(3, 0).random((2, 1, 3, 3)), np.zeros(2),
                       stride=1, padding="same")
        out = layer.forward(np.ones((1, 9, 9)))
        assert out.shape == (2, 9, 9)
