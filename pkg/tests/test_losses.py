import math

import numpy as np
import pytest
from conftest import LOSS_NAMES, finite_diff, loss_case, param_grad_error, random_probs, rel_err

from utrcaf import losses
from utrcaf.errors import DimensionError, LabelError


class TestSoftmax:
    def test_zero_row_is_uniform(self):
        np.testing.assert_allclose(losses.softmax(np.zeros((1, 4))), [[0.25] * 4])

    def test_shift_invariance(self, rng):
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(losses.softmax(x + 7.5), losses.softmax(x), atol=1e-15)

    def test_analytic(self):
        np.testing.assert_allclose(losses.softmax(np.log([[1.0, 3.0]])), [[0.25, 0.75]])

    def test_rows_sum_to_one_for_large_logits(self):
        p = losses.softmax(np.array([[1000.0, -1000.0, 0.0], [5.0, 5.0, 5.0]]))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(p >= 0)


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert losses.cross_entropy_ls(np.array([[0.0, 1.0, 0.0]]), np.array([1]), 0.0) == 0.0

    def test_hand_computed_smoothing(self):
        value = losses.cross_entropy_ls(np.array([[0.9, 0.1]]), np.array([0]), 0.1)
        assert value == pytest.approx(-(0.95 * math.log(0.9) + 0.05 * math.log(0.1)), abs=1e-12)
        assert value == pytest.approx(0.21522, abs=1e-4)

    def test_uniform(self):
        assert losses.cross_entropy_ls(np.full((3, 4), 0.25), np.array([0, 3, 1]), 0.0) == pytest.approx(math.log(4))

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            losses.cross_entropy_ls(np.full((1, 2), 0.5), np.array([2]), 0.0)

    def test_smooth_targets_rows_sum_to_one(self):
        t = losses.smooth_targets(np.array([0, 2, 1]), 3, 0.2)
        np.testing.assert_allclose(t.sum(axis=1), 1.0)
        np.testing.assert_allclose(t[0], [0.8 + 0.2 / 3, 0.2 / 3, 0.2 / 3])


class TestAdapt:
    def test_one_hot_match(self):
        p = np.eye(3)
        assert losses.loss_adapt(p, np.array([0, 1, 2])) == 0.0

    def test_uniform(self):
        assert losses.loss_adapt(np.full((2, 4), 0.25), np.array([1, 2])) == pytest.approx(math.log(4))

    def test_clamp_floor(self):
        value = losses.loss_adapt(np.array([[1.0, 0.0]]), np.array([1]))
        assert value == pytest.approx(-math.log(1e-12))
        assert value == pytest.approx(27.631, abs=1e-3)

    def test_nonnegative(self, rng):
        p = random_probs(rng, 6, 3)
        assert losses.loss_adapt(p, rng.integers(0, 3, 6)) >= 0


class TestForget:
    def test_one_hot_risk_row_contributes_zero(self):
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        assert losses.loss_forget(p, np.array([0, 1]), [0]) == 0.0

    def test_uniform_single_risk(self):
        p = np.full((3, 2), 0.5)
        assert losses.loss_forget(p, np.array([0, 0, 1]), [2]) == pytest.approx(-math.log(2))

    def test_empty_risk_set(self):
        p = np.full((3, 2), 0.5)
        assert losses.loss_forget(p, np.array([0, 0, 1]), []) == 0.0
        np.testing.assert_array_equal(losses.grad_loss_forget(p, np.array([0, 0, 1]), []), 0.0)

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            losses.loss_forget(np.full((2, 2), 0.5), np.array([0, 1]), [2])

    def test_nonpositive(self, rng):
        p = random_probs(rng, 8, 3)
        assert losses.loss_forget(p, rng.integers(0, 3, 8), [1, 4, 5]) <= 0


class TestDiscover:
    def test_one_hot_rows(self):
        assert losses.loss_discover(np.eye(4)) == 0.0

    def test_uniform(self):
        assert losses.loss_discover(np.full((2, 4), 0.25)) == pytest.approx(math.log(4))

    def test_mixed(self):
        p = np.array([[0.5, 0.5], [1.0, 0.0]])
        assert losses.loss_discover(p) == pytest.approx(math.log(2) / 2)
        assert losses.loss_discover(p) == pytest.approx(0.3466, abs=1e-4)

    def test_bounds(self, rng):
        p = random_probs(rng, 10, 5)
        assert 0.0 <= losses.loss_discover(p) <= math.log(5)


class TestDiv:
    def test_uniform_mean(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert losses.loss_div(p) == pytest.approx(0.0, abs=1e-15)

    def test_collapsed(self):
        p = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert losses.loss_div(p) == pytest.approx(math.log(2))

    def test_nonnegative(self, rng):
        for _ in range(10):
            assert losses.loss_div(random_probs(rng, 5, 3)) >= -1e-15


class TestQWeight:
    def test_midpoint(self):
        assert losses.q_weight(np.array([0.0]))[0] == 0.5

    def test_saturation(self):
        q = losses.q_weight(np.array([50.0, -50.0]))
        assert q[0] < 1e-20
        # 1 - 1e-20 rounds to 1.0 in float64, so compare the complement
        assert 1.0 - q[1] < 1e-20

    def test_analytic(self):
        np.testing.assert_allclose(losses.q_weight(np.array([0.0, math.log(3)])), [0.5, 0.25])

    def test_strictly_decreasing(self):
        q = losses.q_weight(np.linspace(-5, 5, 11))
        assert np.all(np.diff(q) < 0)

    def test_extreme_inputs_do_not_overflow(self):
        with np.errstate(over="raise"):
            q = losses.q_weight(np.array([1e4, -1e4]))
        np.testing.assert_array_equal(q, [0.0, 1.0])


class TestKd:
    def test_identical_features(self, rng):
        s = rng.normal(size=(4, 3))
        assert losses.loss_kd(s, s, np.ones(3)) == 0.0

    def test_zero_weights(self, rng):
        assert losses.loss_kd(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), np.zeros(3)) == 0.0

    def test_squared_norm(self):
        assert losses.loss_kd(np.array([[3.0, 4.0]]), np.zeros((1, 2)), np.ones(2)) == 25.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            losses.loss_kd(np.zeros((2, 3)), np.zeros((2, 2)), np.ones(3))
        with pytest.raises(DimensionError):
            losses.loss_kd(np.zeros((2, 3)), np.zeros((2, 3)), np.ones(2))


class TestLogitGradients:
    """Gradients with respect to logits, against central differences."""

    @pytest.mark.parametrize(
        "value, grad",
        [
            (lambda p, y: losses.cross_entropy_ls(p, y, 0.1), lambda p, y: losses.grad_cross_entropy_ls(p, y, 0.1)),
            (losses.loss_adapt, losses.grad_loss_adapt),
            (lambda p, y: losses.loss_forget(p, y, [0, 2, 2]), lambda p, y: losses.grad_loss_forget(p, y, [0, 2, 2])),
            (lambda p, y: losses.loss_discover(p), lambda p, y: losses.grad_loss_discover(p)),
            (lambda p, y: losses.loss_div(p), lambda p, y: losses.grad_loss_div(p)),
        ],
    )
    def test_matches_finite_differences(self, value, grad, rng):
        for _ in range(5):
            logits = rng.normal(size=(4, 3))
            y = rng.integers(0, 3, size=4)
            numeric = finite_diff(lambda z: value(losses.softmax(z), y), logits)
            assert rel_err(grad(losses.softmax(logits), y), numeric) <= 1e-6

    def test_kd_gradient(self, rng):
        s, w = rng.normal(size=(3, 4)), rng.random(4)
        t = rng.normal(size=(3, 4))
        numeric = finite_diff(lambda x: losses.loss_kd(s, x, w), t)
        assert rel_err(losses.grad_loss_kd(s, t, w), numeric) <= 1e-7

    def test_soft_cross_entropy_gradient(self, rng):
        logits = rng.normal(size=(4, 3))
        targets = random_probs(rng, 4, 3)
        numeric = finite_diff(lambda z: losses.soft_cross_entropy(losses.softmax(z), targets), logits)
        assert rel_err(losses.grad_soft_cross_entropy(losses.softmax(logits), targets), numeric) <= 1e-6


class TestParameterGradients:
    """Full backward pass through the model for each loss."""

    @pytest.mark.parametrize("name", LOSS_NAMES)
    def test_twenty_random_instances(self, name):
        errors = [param_grad_error(*loss_case(name, seed)) for seed in range(20)]
        assert max(errors) <= 1e-4
