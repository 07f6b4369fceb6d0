#!/usr/bin/env python3
import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.special import expit

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__))))

from promoalloc.errors import InvalidArgumentError, VocabularyError
from promoalloc.model import (
    DipnModel,
    IncentiveGrid,
    MlpModel,
    ResponseModelProtocol,
    TrainConfig,
    isotonic_embed,
    load_model,
    model_checksum,
    save_model,
)
from tests.utils.fixtures import small_grid


def _perturbed(seed: int, grid: IncentiveGrid, vocab_sizes=(3, 5, 7), scale: float = 1.0) -> DipnModel:
    model = DipnModel.initialize(grid, vocab_sizes, embed_dim=4, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for value in model.params.values():
        value += rng.normal(0.0, scale, size=value.shape)
    return model


def _random_features(rng: np.random.Generator, vocab_sizes, count: int) -> np.ndarray:
    return np.stack([rng.integers(0, size, size=count) for size in vocab_sizes], axis=1)


class TestIsotonicEmbedding(unittest.TestCase):
    def setUp(self):
        self.grid = IncentiveGrid.from_levels([0, 10, 20, 30, 40])

    def test_prefix_of_ones(self):
        np.testing.assert_array_equal(isotonic_embed(self.grid, 20), [1, 1, 1, 0, 0])

    def test_boundaries(self):
        np.testing.assert_array_equal(isotonic_embed(self.grid, 0), [1, 0, 0, 0, 0])
        np.testing.assert_array_equal(isotonic_embed(self.grid, 40), [1, 1, 1, 1, 1])
        np.testing.assert_array_equal(isotonic_embed(self.grid, 25), [1, 1, 1, 0, 0])

    def test_below_grid_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            isotonic_embed(IncentiveGrid.from_levels([5, 10]), 4)

    def test_grid_validation(self):
        with self.assertRaises(InvalidArgumentError):
            IncentiveGrid.from_levels([0])
        with self.assertRaises(InvalidArgumentError):
            IncentiveGrid.from_levels([0, 10, 10])
        self.assertEqual(IncentiveGrid.from_stride(10).levels, tuple(float(v) for v in range(0, 101, 10)))
        self.assertEqual(IncentiveGrid.from_stride(30).levels, (0.0, 30.0, 60.0, 90.0, 100.0))


class TestDipnPrediction(unittest.TestCase):
    def test_models_satisfy_protocol(self):
        grid = small_grid()
        self.assertIsInstance(DipnModel.initialize(grid, (2, 2, 2), seed=0), ResponseModelProtocol)
        self.assertIsInstance(MlpModel.initialize(grid, (2, 2, 2), seed=0), ResponseModelProtocol)

    def test_zero_weights_predict_one_half(self):
        model = DipnModel.initialize(small_grid(4), (2, 2, 2), seed=0)
        for value in model.params.values():
            value[...] = 0.0
        np.testing.assert_array_equal(model.predict_curve((1, 0, 1)), np.full(4, 0.5))

    def test_hand_set_toy_curve(self):
        model = DipnModel.initialize(small_grid(3), (1, 1, 1), embed_dim=2, seed=0)
        for value in model.params.values():
            value[...] = 0.0
        model.params["global_bias"][0] = -1.0
        model.params["uplift_b"][:] = 0.5
        np.testing.assert_allclose(model.uplift_weights(np.array([[0, 0, 0]])), [[0.5, 0.5]])
        np.testing.assert_allclose(model.predict_curve((0, 0, 0)), expit([-1.0, -0.5, 0.0]), rtol=0, atol=1e-15)

    def test_lowest_level_is_bias_prediction(self):
        model = _perturbed(3, IncentiveGrid.from_stride(10))
        features = np.array([[0, 1, 2], [2, 4, 6]])
        np.testing.assert_array_equal(model.predict_curves(features)[:, 0], expit(model.bias_logits(features)))

    def test_monotone_for_random_parameters(self):
        grid = IncentiveGrid.from_stride(10)
        rng = np.random.default_rng(0)
        for seed in range(5):
            model = _perturbed(seed, grid, scale=1.0)
            curves = model.predict_curves(_random_features(rng, (3, 5, 7), 1000))
            self.assertEqual(curves.shape, (1000, grid.size))
            self.assertTrue(np.all(np.diff(curves, axis=1) >= 0.0))
            self.assertTrue(np.all(model.uplift_weights(_random_features(rng, (3, 5, 7), 100)) >= 0.0))

    def test_predict_matches_curve_exactly(self):
        grid = IncentiveGrid.from_stride(20)
        model = _perturbed(4, grid)
        x = (2, 3, 5)
        curve = model.predict_curve(x)
        self.assertEqual(curve.shape, (grid.size,))
        for j, level in enumerate(grid.levels):
            self.assertEqual(model.predict(x, level), curve[j])

    def test_off_grid_incentive_rounds_down(self):
        grid = IncentiveGrid.from_levels([0, 10, 20])
        model = _perturbed(5, grid)
        self.assertEqual(model.predict((0, 0, 0), 15), model.predict((0, 0, 0), 10))
        self.assertEqual(model.predict((0, 0, 0), 35), model.predict((0, 0, 0), 20))
        with self.assertRaises(InvalidArgumentError):
            model.predict((0, 0, 0), -1)

    def test_out_of_vocabulary_feature(self):
        model = _perturbed(6, small_grid())
        with self.assertRaises(VocabularyError) as ctx:
            model.predict_curve((0, 5, 0))
        self.assertEqual(ctx.exception.feature_index, 1)
        self.assertEqual(ctx.exception.value, 5)

    def test_first_order_uplift_approximation(self):
        grid = small_grid(4)
        model = DipnModel.initialize(grid, (2, 2, 2), embed_dim=2, seed=1)
        rng = np.random.default_rng(2)
        for name, value in model.params.items():
            value[...] = rng.normal(0.0, 0.001, size=value.shape) if "embed" in name else 0.0
        model.params["global_bias"][0] = -0.05
        model.params["uplift_b"][:] = [0.02, 0.03, 0.01]
        features = np.array([[0, 1, 0], [1, 1, 1]])
        logits = model.curve_logits(features)
        self.assertTrue(np.all(np.abs(logits) < 0.1))
        curves = model.predict_curves(features)
        weights = model.uplift_weights(features)
        slope = expit(logits[:, :-1]) * (1.0 - expit(logits[:, :-1]))
        approx = slope * weights
        np.testing.assert_allclose(np.diff(curves, axis=1), approx, rtol=0.05)


class TestModelFiles(unittest.TestCase):
    def test_round_trip_is_bit_identical(self):
        grid = IncentiveGrid.from_stride(25)
        cfg = TrainConfig(bias_epochs=3)
        features = _random_features(np.random.default_rng(0), (3, 5, 7), 50)
        for model in (_perturbed(7, grid), MlpModel.initialize(grid, (3, 5, 7), seed=8)):
            with tempfile.TemporaryDirectory() as temp_dir:
                path = save_model(Path(temp_dir) / "model.json", model, cfg)
                loaded, loaded_cfg = load_model(path)
            self.assertEqual(loaded.kind, model.kind)
            self.assertEqual(loaded_cfg, cfg)
            self.assertEqual(model_checksum(loaded), model_checksum(model))
            np.testing.assert_array_equal(loaded.predict_curves(features), model.predict_curves(features))

    def test_checksum_tracks_parameters(self):
        model = _perturbed(9, small_grid())
        other = model.copy()
        other.params["uplift_b"][0] += 1e-12
        self.assertNotEqual(model_checksum(model), model_checksum(other))


if __name__ == "__main__":
    unittest.main(verbosity=2)
