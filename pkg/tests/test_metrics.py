"""Evaluation metrics: Gini, SSIM, top-k overlaps, AOPC, ground-truth
scores, DiffROAR plumbing, interpretation attack, cascading randomization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structgrad.engine import Dense, Network, forward, make_convnet
from structgrad.metrics import (
    aopc_lerf,
    aopc_morf,
    binary_scores,
    cascading_randomization,
    diffroar,
    five_band_scores,
    gini,
    interp_attack,
    ssim,
    topk_dice,
    topk_intersection,
)
from structgrad.rng import make_rng

nonzero_vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=12).filter(
    lambda v: any(x != 0 for x in v))


class TestGini:
    def test_uniform_zero(self):
        assert gini(np.full(7, 3.0)) == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_maximal(self):
        assert gini(np.array([0.0, 0.0, 5.0, 0.0])) == pytest.approx(0.75)

    def test_half_support(self):
        assert gini(np.array([0.0, 0.0, 1.0, 1.0])) == pytest.approx(0.5)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            gini(np.zeros(4))

    @given(nonzero_vec, st.floats(0.01, 100))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance(self, v, c):
        v = np.array(v)
        assert gini(c * v) == pytest.approx(gini(v), abs=1e-9)

    def test_concentration_increases(self):
        assert gini(np.array([2.0, 0.0])) > gini(np.array([1.0, 1.0]))

    @given(nonzero_vec)
    @settings(max_examples=60, deadline=None)
    def test_range(self, v):
        v = np.array(v)
        g = gini(v)
        assert -1e-12 <= g <= 1 - 1 / v.size + 1e-12


class TestSsim:
    def test_identical_maps(self):
        m = make_rng(0, 60).random((32, 32))
        assert ssim(m, m) == pytest.approx(1.0, abs=1e-12)

    def test_offset_invariance_through_normalization(self):
        m = make_rng(1, 60).random((32, 32))
        assert ssim(m, m + 0.37) == pytest.approx(1.0, abs=1e-9)

    def test_independent_random_maps_low(self):
        rng = make_rng(2, 60)
        a, b = rng.random((32, 32)), rng.random((32, 32))
        assert ssim(a, b) < 0.5

    def test_symmetry(self):
        rng = make_rng(3, 60)
        a, b = rng.random((32, 32)), rng.random((32, 32))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_small_image_fallback(self):
        rng = make_rng(4, 60)
        a, b = rng.random((5, 5)), rng.random((5, 5))
        val = ssim(a, b)
        assert -1.0 <= val <= 1.0
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((4, 4)), np.zeros((5, 5)))


class TestTopk:
    def test_identical(self):
        m = np.array([4.0, 3.0, 2.0, 1.0])
        assert topk_intersection(m, m, 0.5) == 1.0
        assert topk_dice(m, m, 0.5) == 1.0

    def test_reversed_order_disjoint(self):
        a = np.array([4.0, 3.0, 2.0, 1.0])
        b = np.array([1.0, 2.0, 3.0, 4.0])
        assert topk_intersection(a, b, 0.5) == 0.0
        assert topk_dice(a, b, 0.5) == 0.0

    def test_half_overlap_dice(self):
        a = np.array([4.0, 3.0, 1.0, 1.0])
        b = np.array([4.0, 1.0, 3.0, 1.0])
        # top-2 masks {0,1} and {0,2}: overlap 1 of 2
        assert topk_dice(a, b, 0.5) == pytest.approx(0.5)

    def test_only_nonzero_entries_counted(self):
        a = np.array([5.0, 0.0, 0.0, 1.0])  # m=2 nonzeros, k=0.5 -> top-1
        b = np.array([5.0, 4.0, 3.0, 2.0])  # m=4 nonzeros, k=0.5 -> top-2
        assert topk_intersection(a, b, 0.5) == 1.0

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            topk_intersection(np.zeros(4), np.ones(4), 0.5)

    @given(nonzero_vec)
    @settings(max_examples=60, deadline=None)
    def test_monotone_transform_invariance(self, v):
        v = np.array(v)
        w = np.sign(v) * (np.abs(v) ** 3 + np.abs(v))  # strictly monotone in |v|
        assert topk_intersection(v, w, 0.4) == 1.0


class TestAopc:
    def test_constant_output_zero(self):
        net = Network([Dense(np.zeros((2, 4)), np.zeros(2))], 2)
        m = np.array([1.0, 2.0, 3.0, 4.0])
        assert aopc_morf(net, np.ones(4), m, 0, 4, 0.0) == pytest.approx(0.0)

    def test_linear_sum_arithmetic_series(self):
        # logit_0 = sum(x); deleting ones one at a time drops the score 1,2,3,4
        net = Network([Dense(np.vstack([np.ones(4), np.zeros(4)]), np.zeros(2))], 2)
        m = np.full(4, 1.0)
        val = aopc_morf(net, np.ones(4), m, 0, 4, 0.0, on_logits=True)
        assert val == pytest.approx((0 + 1 + 2 + 3 + 4) / 5)

    def test_zero_steps_zero(self, small_convnet):
        x = make_rng(5, 60).random((1, 12, 12))
        assert aopc_morf(small_convnet, x, x[0], 0, 0, 0.0) == 0.0

    def test_steps_bounds_checked(self, small_convnet):
        x = np.zeros((1, 12, 12))
        with pytest.raises(ValueError):
            aopc_morf(small_convnet, x, x[0], 0, 12 * 12 + 1, 0.0)

    def test_morf_vs_lerf_on_informative_map(self):
        # weights concentrated on two pixels; gradient map ranks them first
        w = np.zeros((2, 9))
        w[0, [1, 5]] = 3.0
        net = Network([Dense(w, np.zeros(2))], 2)
        x = np.ones(9)
        m = np.abs(w[0])
        assert aopc_morf(net, x, m, 0, 4, 0.0) > aopc_lerf(net, x, m, 0, 4, 0.0)


class TestGroundTruthScores:
    def test_perfect_five_band(self):
        mask = np.array([[2, 0], [0, 0]])
        values = np.array([[9.0, 1.0], [1.0, 1.0]])
        acc, rec, prec, fpr = five_band_scores(values, mask, 0.25, 0.0)
        assert acc == pytest.approx(100.0)
        assert fpr == pytest.approx(0.0)

    def test_all_background_prediction_zero_recall(self):
        mask = np.array([[2, 1], [0, 0]])
        values = np.array([[1.0, 1.0], [1.0, 1.0]])
        acc, rec, prec, fpr = five_band_scores(values, mask, 0.0, 0.0)
        # classes 1 and 2 recall 0, class 0 recall 100 -> macro (0+0+100)/3
        assert rec == pytest.approx(100.0 / 3.0)

    def test_q_sum_validated(self):
        with pytest.raises(ValueError):
            five_band_scores(np.ones(4), np.zeros(4), 0.7, 0.5)

    def test_perfect_binary(self):
        mask = np.array([2, 0, 0, 0])
        values = np.array([5.0, 1.0, 1.0, 1.0])
        acc, rec, prec, fpr = binary_scores(values, mask, 0.25)
        assert (acc, rec, prec, fpr) == (100.0, 100.0, 100.0, 0.0)

    def test_empty_positive_prediction(self):
        mask = np.array([2, 0, 0, 0])
        acc, rec, prec, fpr = binary_scores(np.ones(4), mask, 0.0)
        assert rec == 0.0 and prec == 0.0

    def test_inverted_map_zero_precision(self):
        mask = np.array([2, 0])
        values = np.array([1.0, 5.0])
        acc, rec, prec, fpr = binary_scores(values, mask, 0.5)
        assert prec == 0.0 and fpr == pytest.approx(100.0)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_permutation_equivariance(self, seed):
        rng = make_rng(seed, 61)
        values = rng.random(16)
        mask = rng.integers(0, 3, size=16)
        if not mask.any():
            mask[0] = 2
        perm = rng.permutation(16)
        assert five_band_scores(values, mask, 0.2, 0.3) == pytest.approx(
            five_band_scores(values[perm], mask[perm], 0.2, 0.3))
        assert binary_scores(values, mask, 0.25) == pytest.approx(
            binary_scores(values[perm], mask[perm], 0.25))


class TestDiffroar:
    def test_k_zero_is_zero(self, tiny_dataset):
        train, test = tiny_dataset
        maps_tr = [s.image[0] for s in train]
        maps_te = [s.image[0] for s in test]
        out = diffroar(train, test, maps_tr, maps_te, [0],
                       make_net=lambda seed: None,
                       retrain=lambda net, ds, seed: (_ for _ in ()).throw(AssertionError))
        assert out[0] == 0.0

    def test_oracle_maps_positive(self, tiny_dataset):
        from structgrad.training import TrainConfig, train_standard
        train, test = tiny_dataset
        maps_tr = [(s.mask == 2).astype(float) for s in train]
        maps_te = [(s.mask == 2).astype(float) for s in test]

        def make_net(seed):
            return make_convnet(make_rng(seed, 20), (1, 32, 32), 4)

        def retrain(net, ds, seed):
            cfg = TrainConfig(epochs=4, batch_size=16, learning_rate=0.2, seed=seed)
            return train_standard(net, ds, cfg)

        out = diffroar(train, test, maps_tr, maps_te, [0.1], make_net, retrain)
        assert np.isfinite(out[0.1])


class TestInterpAttack:
    def test_zero_budget_identity(self, small_convnet):
        x = make_rng(6, 60).random((1, 12, 12))
        res = interp_attack(small_convnet, x, 0.0, 10, seed=0)
        assert np.array_equal(res.x_adv, x)
        assert res.topk_intersection == 1.0

    def test_rho_within_budget_and_prediction_preserved(self, small_convnet):
        x = make_rng(7, 60).random((1, 12, 12))
        budget = 0.3
        res = interp_attack(small_convnet, x, budget, 20, seed=1)
        assert np.linalg.norm(res.rho.reshape(-1)) <= budget + 1e-9
        _, p0 = forward(small_convnet, x)
        _, p1 = forward(small_convnet, res.x_adv)
        assert np.argmax(p0) == np.argmax(p1)

    def test_objective_bounds(self, small_convnet):
        x = make_rng(8, 60).random((1, 12, 12))
        res = interp_attack(small_convnet, x, 0.5, 15, seed=2)
        assert 0.0 <= res.topk_intersection <= 1.0
        assert res.objective == pytest.approx(1.0 - res.topk_intersection)

    def test_deterministic(self, small_convnet):
        x = make_rng(9, 60).random((1, 12, 12))
        a = interp_attack(small_convnet, x, 0.4, 10, seed=5)
        b = interp_attack(small_convnet, x, 0.4, 10, seed=5)
        assert np.array_equal(a.rho, b.rho)


class TestCascadingRandomization:
    def test_control_row_and_coverage(self, small_convnet):
        x = make_rng(10, 60).random((1, 12, 12))
        rows = cascading_randomization(small_convnet, x, 0, seed=0)
        assert rows[0] == (-1, 1.0)
        from structgrad.engine import parameterized_layer_indices
        assert len(rows) == 1 + len(parameterized_layer_indices(small_convnet))

    def test_reproducible(self, small_convnet):
        x = make_rng(11, 60).random((1, 12, 12))
        assert cascading_randomization(small_convnet, x, 0, seed=3) == \
            cascading_randomization(small_convnet, x, 0, seed=3)
