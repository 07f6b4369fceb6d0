#!/usr/bin/env python3
import math
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__))))

from promoalloc.model import TrainConfig, alpha_schedule, log_loss, smoothness_loss, total_loss
from promoalloc.model.losses import PROB_CLAMP, smoothness_loss_grad
from tests.utils.fixtures import random_batch, small_grid, tiny_dipn


class TestLogLoss(unittest.TestCase):
    def test_coin_flip(self):
        self.assertAlmostEqual(float(log_loss(0.5, 1)), math.log(2.0), places=12)
        self.assertAlmostEqual(float(log_loss(0.5, 0)), math.log(2.0), places=12)

    def test_weight_scales_linearly(self):
        self.assertAlmostEqual(float(log_loss(0.3, 1, 2.0)), 2.0 * float(log_loss(0.3, 1)), places=12)

    def test_extreme_probabilities_are_finite(self):
        values = log_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(float(values[0]), -math.log(PROB_CLAMP), places=6)


class TestSmoothnessLoss(unittest.TestCase):
    def test_two_weights(self):
        self.assertAlmostEqual(smoothness_loss(np.array([1.0, 2.0])), 0.25, places=5)

    def test_constant_weights(self):
        self.assertEqual(smoothness_loss(np.full(6, 0.4)), 0.0)

    def test_single_weight(self):
        self.assertEqual(smoothness_loss(np.array([0.7])), 0.0)

    def test_rows_are_independent(self):
        w = np.array([[1.0, 2.0], [0.5, 0.5]])
        np.testing.assert_allclose(smoothness_loss(w), [smoothness_loss(w[0]), 0.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(0.2, 1.0, size=5)
        h = 1e-6
        numeric = np.array(
            [(smoothness_loss(w + h * e, 6) - smoothness_loss(w - h * e, 6)) / (2 * h) for e in np.eye(5)]
        )
        np.testing.assert_allclose(smoothness_loss_grad(w, 6), numeric, rtol=1e-5, atol=1e-9)


class TestAlphaSchedule(unittest.TestCase):
    def test_linear_decay(self):
        cfg = TrainConfig(alpha_upper=1.0, alpha_lower=0.01, decay=1e-3)
        self.assertAlmostEqual(alpha_schedule(cfg, 500), 0.5, places=12)
        self.assertEqual(alpha_schedule(cfg, 0), 1.0)

    def test_floor(self):
        cfg = TrainConfig(alpha_upper=1.0, alpha_lower=0.01, decay=1e-3)
        self.assertEqual(alpha_schedule(cfg, 10**6), 0.01)

    def test_zero_decay_is_constant(self):
        cfg = TrainConfig(alpha_upper=0.7, alpha_lower=0.1, decay=0.0)
        self.assertEqual(alpha_schedule(cfg, 12345), 0.7)

    def test_negative_step_is_rejected(self):
        with self.assertRaises(ValueError):
            alpha_schedule(TrainConfig(), -1)


class TestTotalLoss(unittest.TestCase):
    def test_without_smoothness_is_mean_weighted_log_loss(self):
        grid = small_grid(4)
        model = tiny_dipn(0, grid)
        batch = random_batch(np.random.default_rng(1), grid, (3, 2, 2), count=16)
        expected = log_loss(model.predict_samples(batch.features, batch.incentives), batch.labels, batch.weights)
        self.assertAlmostEqual(total_loss(model, batch, 0.0), float(np.mean(expected)), places=12)

    def test_constant_uplift_ignores_alpha(self):
        grid = small_grid(5)
        model = tiny_dipn(2, grid)
        for name in ("uplift_w", "uplift_bias_w", "uplift_prev_w"):
            model.params[name][...] = 0.0
        model.params["uplift_b"][:] = 0.3
        batch = random_batch(np.random.default_rng(3), grid, (3, 2, 2), count=16)
        self.assertEqual(total_loss(model, batch, 0.0), total_loss(model, batch, 5.0))

    def test_smoothness_adds_alpha_term(self):
        grid = small_grid(4)
        model = tiny_dipn(4, grid)
        batch = random_batch(np.random.default_rng(5), grid, (3, 2, 2), count=16)
        smooth = smoothness_loss(model.uplift_weights(batch.features), num_levels=grid.size)
        expected = total_loss(model, batch, 0.0) + 2.0 * float(np.mean(smooth))
        self.assertAlmostEqual(total_loss(model, batch, 2.0), expected, places=12)


if __name__ == "__main__":
    unittest.main(verbosity=2)
