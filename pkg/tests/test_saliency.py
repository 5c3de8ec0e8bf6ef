"""Saliency maps: simple gradient, SmoothGrad, sparsification, feature
visualization."""

import numpy as np
import pytest

from structgrad.engine import Dense, Network, make_mlp
from structgrad.rng import make_rng
from structgrad.saliency import feature_vis, simple_grad, smooth_grad, sparsify


def linear_net():
    w = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
    return Network([Dense(w, np.zeros(2))], 2), w


class TestSimpleGrad:
    def test_linear_logit_mode_gives_weight_row(self):
        net, w = linear_net()
        m = simple_grad(net, np.array([0.1, 0.2, 0.3]), 1, on_logits=True)
        assert np.allclose(m.raw, w[1])
        assert np.allclose(m.values, np.abs(w[1]))
        assert m.method == "simple_grad_logit"
        assert m.target_class == 1

    def test_constant_output_zero_map(self):
        net = Network([Dense(np.zeros((2, 3)), np.zeros(2))], 2)
        m = simple_grad(net, np.ones(3), 0)
        assert np.all(m.values == 0.0)

    def test_deterministic_across_calls(self, small_convnet):
        x = make_rng(0, 50).random((1, 12, 12))
        a = simple_grad(small_convnet, x, 1)
        b = simple_grad(small_convnet, x, 1)
        assert np.array_equal(a.values, b.values)

    def test_channel_reduction_is_sum_of_abs(self):
        rng = make_rng(1, 50)
        from structgrad.engine import Activation, Flatten, glorot_conv, glorot_dense
        net = Network([Flatten(), glorot_dense(rng, 3 * 4 * 4, 2)], 2)
        x = rng.random((3, 4, 4))
        m = simple_grad(net, x, 0)
        assert m.values.shape == (4, 4)
        assert np.allclose(m.values, np.abs(m.raw).sum(axis=0))


class TestSmoothGrad:
    def test_sigma_zero_equals_simple_grad(self, small_convnet):
        x = make_rng(2, 50).random((1, 12, 12))
        simple = simple_grad(small_convnet, x, 0)
        for n in (1, 5):
            smooth = smooth_grad(small_convnet, x, 0, n=n, sigma=0.0, seed=7)
            assert np.array_equal(smooth.values, simple.values)

    def test_n1_equals_simple_grad_at_noisy_point(self, small_convnet):
        x = make_rng(3, 50).random((1, 12, 12))
        sigma, seed = 0.1, 11
        smooth = smooth_grad(small_convnet, x, 0, n=1, sigma=sigma, seed=seed)
        noisy = x + sigma * make_rng(seed, 2).standard_normal(x.shape)
        assert np.allclose(smooth.values, simple_grad(small_convnet, noisy, 0).values,
                           atol=1e-15)

    def test_variance_decreases_with_n(self, small_convnet):
        x = make_rng(4, 50).random((1, 12, 12))

        def spread(n):
            maps = [smooth_grad(small_convnet, x, 0, n=n, sigma=0.3, seed=s).values
                    for s in range(12)]
            return float(np.var(np.stack(maps), axis=0).mean())

        assert spread(64) < spread(4)

    def test_invalid_args(self, small_convnet):
        x = np.zeros((1, 12, 12))
        with pytest.raises(ValueError):
            smooth_grad(small_convnet, x, 0, n=0, sigma=0.1, seed=0)
        with pytest.raises(ValueError):
            smooth_grad(small_convnet, x, 0, n=4, sigma=-0.1, seed=0)


class TestSparsify:
    def _map(self, values):
        values = np.asarray(values, dtype=np.float64)
        from structgrad.saliency import SaliencyMap
        return SaliencyMap(values, values, "simple_grad", 0)

    def test_keep_all_is_identity(self):
        m = self._map([3.0, 1.0, 2.0])
        assert np.array_equal(sparsify(m, 1.0).values, m.values)

    def test_selection(self):
        out = sparsify(self._map([3.0, 1.0, 2.0]), 1 / 3)
        assert np.array_equal(out.values, [3.0, 0.0, 0.0])

    def test_nonzero_count(self):
        rng = make_rng(5, 50)
        vals = rng.random(100) + 0.1
        out = sparsify(self._map(vals), 0.37)
        assert np.count_nonzero(out.values) == int(np.ceil(0.37 * 100))

    def test_idempotent(self):
        m = self._map(make_rng(6, 50).random(50))
        once = sparsify(m, 0.2)
        twice = sparsify(once, 0.2)
        assert np.array_equal(once.values, twice.values)

    def test_tie_break_lowest_index(self):
        out = sparsify(self._map([2.0, 2.0, 2.0]), 1 / 3)
        assert np.array_equal(out.values, [2.0, 0.0, 0.0])

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            sparsify(self._map([1.0]), 0.0)


class TestFeatureVis:
    def test_linear_model_converges_to_scaled_weight_row(self):
        w = np.array([[0.8, -0.6], [0.1, 0.2]])
        net = Network([Dense(w, np.zeros(2))], 2)
        decay = 0.5
        out = feature_vis(net, 0, steps=400, step_size=0.2, decay=decay, seed=0,
                          input_shape=(2,))
        expected = np.clip(w[0] / (2 * decay), 0.0, 1.0)
        assert np.allclose(out, expected, atol=1e-6)

    def test_objective_nondecreasing_for_linear_model(self):
        w = np.array([[0.5, 0.3, -0.2]])
        net = Network([Dense(w, np.zeros(1))], 1)
        decay = 0.1

        def objective(x):
            return float(w[0] @ x - decay * x @ x)

        vals = [objective(feature_vis(net, 0, steps=s, step_size=0.1, decay=decay,
                                      seed=3, input_shape=(3,))) for s in (1, 5, 20, 80)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_output_in_pixel_range(self, small_convnet):
        out = feature_vis(small_convnet, 0, steps=10, step_size=0.5, decay=0.05,
                          seed=1, input_shape=(1, 12, 12))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_zero_steps_rejected(self, small_convnet):
        with pytest.raises(ValueError):
            feature_vis(small_convnet, 0, steps=0, step_size=0.1, decay=0.1,
                        seed=0, input_shape=(1, 12, 12))
