from __future__ import annotations

import math

import numpy as np
import pytest

from src.config import IGNORE_LABEL, LossConfig
from src.errors import ConfigError, EmptyInputError, ShapeError, ValidationError
from src.losses.gradcheck import GRAD_TOL, SUITES, finite_difference, relative_error
from src.losses.objectives import LabelMap, LossParts, color_mse, regional_smoothness, sem_ce, total_loss


class TestLabelMap:
    def test_one_hot_skips_ignore(self):
        gt = LabelMap(np.array([[0, 1], [IGNORE_LABEL, 1]]), 2)
        hot = gt.one_hot()
        assert hot.shape == (2, 2, 2)
        np.testing.assert_array_equal(hot[:, 1, 0], 0.0)
        np.testing.assert_array_equal(hot.sum(axis=0), gt.valid)

    @pytest.mark.parametrize("labels", [[[0, 3]], [[-1, 0]]])
    def test_out_of_range(self, labels):
        with pytest.raises(ValidationError):
            LabelMap(np.array(labels), 3)

    def test_float_labels_must_be_integral(self):
        assert LabelMap(np.array([[1.0, 2.0]]), 3).labels.dtype == np.int64
        with pytest.raises(ValidationError):
            LabelMap(np.array([[1.5, 2.0]]), 3)

    def test_not_2d(self):
        with pytest.raises(ShapeError):
            LabelMap(np.zeros(4, dtype=int), 2)


class TestCrossEntropy:
    def test_half_probability(self):
        gt = LabelMap(np.array([[1]]), 2)
        pred = np.array([0.5, 0.5]).reshape(2, 1, 1)
        assert sem_ce(gt, pred).value == pytest.approx(-math.log(0.5), abs=1e-9)

    def test_ignore_pixels_do_not_count(self):
        gt = LabelMap(np.array([[0, IGNORE_LABEL]]), 2)
        pred = np.zeros((2, 1, 2))
        pred[0, 0, 0] = 1.0
        result = sem_ce(gt, pred)
        assert result.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(result.grad[:, 0, 1], 0.0)

    def test_floor_keeps_zero_probability_finite(self):
        gt = LabelMap(np.array([[0]]), 2)
        value = sem_ce(gt, np.zeros((2, 1, 1))).value
        assert value == pytest.approx(-math.log(1e-8))

    def test_everything_ignored(self):
        gt = LabelMap(np.full((2, 2), IGNORE_LABEL), 3)
        with pytest.raises(EmptyInputError):
            sem_ce(gt, np.full((3, 2, 2), 1 / 3))

    def test_distribution_above_one(self):
        gt = LabelMap(np.array([[0]]), 2)
        with pytest.raises(ValidationError):
            sem_ce(gt, np.array([0.8, 0.8]).reshape(2, 1, 1))

    def test_shape_mismatch(self):
        gt = LabelMap(np.zeros((2, 2), dtype=int), 2)
        with pytest.raises(ShapeError):
            sem_ce(gt, np.full((3, 2, 2), 0.1))


class TestRegionalSmoothness:
    def test_hand_example(self):
        gt = LabelMap(np.zeros((2, 2), dtype=int), 2)
        pred = np.zeros((2, 2, 2))
        pred[0] = [[1.0, 0.8], [0.6, 0.6]]
        assert regional_smoothness(gt, pred).value == pytest.approx(0.8, abs=1e-12)

    def test_pairs_across_regions_are_free(self):
        gt = LabelMap(np.array([[0, 1], [0, 1]]), 2)
        pred = np.zeros((2, 2, 2))
        pred[0] = [[1.0, 0.0], [1.0, 0.0]]
        pred[1] = [[0.0, 1.0], [0.0, 1.0]]
        assert regional_smoothness(gt, pred).value == 0.0

    def test_ignore_breaks_pairs(self):
        gt = LabelMap(np.array([[0, IGNORE_LABEL, 0]]), 1)
        pred = np.array([[[1.0, 0.0, 0.2]]])
        result = regional_smoothness(gt, pred)
        assert result.value == 0.0
        assert not np.any(result.grad)

    def test_ties_have_zero_subgradient(self):
        gt = LabelMap(np.zeros((1, 2), dtype=int), 1)
        result = regional_smoothness(gt, np.full((1, 1, 2), 0.4))
        assert not np.any(result.grad)


class TestCombined:
    def test_default_weights(self):
        config = LossConfig()
        assert (config.lambda_sem, config.lambda_c, config.lambda_rs) == (0.1, 1.0, 0.001)

    def test_unit_parts(self):
        assert total_loss(LossParts(1.0, 1.0, 1.0)) == pytest.approx(1.101, abs=1e-12)
        assert total_loss({"sem": 1.0, "color": 1.0, "rs": 1.0}) == pytest.approx(1.101, abs=1e-12)
        assert total_loss({"color": 2.0}) == pytest.approx(2.0)

    def test_unknown_part(self):
        with pytest.raises(ValidationError):
            total_loss({"depth": 1.0})

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LossConfig(lambda_rs=-1.0).validate()

    def test_color_mse(self):
        gt = np.zeros((3, 2, 2))
        pred = np.full((3, 2, 2), 0.5)
        result = color_mse(gt, pred)
        assert result.value == pytest.approx(0.25)
        np.testing.assert_allclose(result.grad, 2 * 0.5 / 12)
        with pytest.raises(ShapeError):
            color_mse(gt, pred[:2])
        with pytest.raises(EmptyInputError):
            color_mse(np.zeros((3, 0, 0)), np.zeros((3, 0, 0)))


class TestGradients:
    def test_finite_difference_on_quadratic(self):
        x0 = np.array([[1.0, -2.0], [0.5, 3.0]])
        numeric = finite_difference(lambda x: float(np.sum(x**2)), x0)
        np.testing.assert_allclose(numeric, 2 * x0, atol=1e-8)

    def test_relative_error_mask(self):
        assert relative_error(np.array([1.0, 5.0]), np.array([1.0, 0.0]), np.array([True, False])) == 0.0

    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_analytic_matches_central_difference(self, name):
        assert SUITES[name](0) <= GRAD_TOL

    @pytest.mark.parametrize("seed", [1, 2])
    def test_semantic_backprop_other_seeds(self, seed):
        assert SUITES["backprop_semantic"](seed) <= GRAD_TOL
