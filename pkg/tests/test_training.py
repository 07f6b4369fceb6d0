#!/usr/bin/env python3
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__))))

from promoalloc.errors import EmptyPhaseDataError, InvalidArgumentError
from promoalloc.metrics import rpr
from promoalloc.model import (
    BIAS_PARAM_NAMES,
    UPLIFT_PARAM_NAMES,
    DipnModel,
    IncentiveGrid,
    MlpModel,
    TrainConfig,
    new_model,
    train_bias_phase,
    train_dipn,
    train_mlp,
    train_model,
    train_uplift_phase,
)
from promoalloc.synthdata import draw_dataset, gen_population
from tests.utils.fixtures import slow_test

QUICK = TrainConfig(learning_rate=0.02, batch_size=64, bias_epochs=3, uplift_epochs=3, mlp_epochs=3, embed_dim=4)


def _synthetic(seed: int = 0, n_samples: int = 3000):
    pop = gen_population(2, 2, 2, seed=seed)
    return pop, draw_dataset(pop, seed=seed + 1, n_samples=n_samples)


class TestTrainConfig(unittest.TestCase):
    def test_alpha_bounds_are_validated(self):
        with self.assertRaises(InvalidArgumentError):
            TrainConfig(alpha_upper=0.1, alpha_lower=0.5)
        with self.assertRaises(InvalidArgumentError):
            TrainConfig(learning_rate=0.0)

    def test_dict_round_trip(self):
        cfg = TrainConfig(mlp_hidden=(4, 2), decay=0.5)
        self.assertEqual(TrainConfig.from_dict(cfg.to_dict()), cfg)
        with self.assertRaises(InvalidArgumentError):
            TrainConfig.from_dict({"learning_rat": 0.1})

    def test_unknown_model_kind(self):
        with self.assertRaises(InvalidArgumentError):
            new_model("gbdt", IncentiveGrid.from_stride(10), (2, 2, 2), QUICK)


class TestPhaseContracts(unittest.TestCase):
    def setUp(self):
        self.grid = IncentiveGrid.from_stride(10)
        _, self.samples = _synthetic()
        self.model = DipnModel.initialize(self.grid, (2, 2, 2), embed_dim=4, seed=0)

    def _assert_unchanged(self, before: DipnModel, after: DipnModel, names):
        for name in names:
            np.testing.assert_array_equal(before.params[name], after.params[name], err_msg=name)

    def _assert_changed(self, before: DipnModel, after: DipnModel, names):
        self.assertTrue(any(not np.array_equal(before.params[name], after.params[name]) for name in names))

    def test_bias_phase_leaves_uplift_net_untouched(self):
        trained = train_bias_phase(self.model, self.samples, QUICK)
        self._assert_unchanged(self.model, trained, UPLIFT_PARAM_NAMES)
        self._assert_changed(self.model, trained, BIAS_PARAM_NAMES)

    def test_uplift_phase_leaves_bias_net_untouched(self):
        trained = train_uplift_phase(self.model, self.samples, QUICK)
        self._assert_unchanged(self.model, trained, BIAS_PARAM_NAMES)
        self._assert_changed(self.model, trained, UPLIFT_PARAM_NAMES)

    def test_input_model_is_not_mutated(self):
        snapshot = self.model.copy()
        train_dipn(self.model, self.samples, QUICK)
        self._assert_unchanged(snapshot, self.model, tuple(self.model.params))

    def test_empty_lowest_level(self):
        high = [sample for sample in self.samples if sample.incentive >= 10]
        with self.assertRaises(EmptyPhaseDataError):
            train_bias_phase(self.model, high, QUICK)
        with self.assertRaises(EmptyPhaseDataError):
            train_dipn(self.model, high, QUICK)

    def test_empty_training_set(self):
        with self.assertRaises(EmptyPhaseDataError):
            train_uplift_phase(self.model, [], QUICK)
        with self.assertRaises(EmptyPhaseDataError):
            train_mlp(MlpModel.initialize(self.grid, (2, 2, 2), seed=0), [], QUICK)

    def test_progress_reports_each_epoch(self):
        updates = []
        train_dipn(self.model, self.samples, QUICK, validation=self.samples[:500], progress_callback=updates.append)
        phases = [update.phase for update in updates]
        self.assertEqual(phases, ["blp"] * QUICK.bias_epochs + ["ulp"] * QUICK.uplift_epochs)
        self.assertEqual(updates[-1].progress, 100)
        self.assertTrue(all(update.record.validation_loss is not None for update in updates))
        ulp = [update.record for update in updates if update.phase == "ulp"]
        self.assertLessEqual(ulp[-1].alpha, ulp[0].alpha)


class TestTrainingOutcome(unittest.TestCase):
    def test_same_seed_same_model(self):
        grid = IncentiveGrid.from_stride(20)
        _, samples = _synthetic(seed=3, n_samples=1500)
        for kind in ("dipn", "mlp"):
            first = train_model(new_model(kind, grid, (2, 2, 2), QUICK), samples, QUICK)
            second = train_model(new_model(kind, grid, (2, 2, 2), QUICK), samples, QUICK)
            for name, value in first.params.items():
                np.testing.assert_array_equal(value, second.params[name])

    def test_training_reduces_loss(self):
        grid = IncentiveGrid.from_stride(10)
        _, samples = _synthetic(seed=4)
        cfg = TrainConfig(learning_rate=0.02, batch_size=64, mlp_epochs=8, embed_dim=4)
        updates = []
        model = MlpModel.initialize(grid, (2, 2, 2), embed_dim=4, seed=0)
        train_mlp(model, samples, cfg, progress_callback=updates.append)
        self.assertLess(updates[-1].record.train_loss, updates[0].record.train_loss)

    def test_bias_phase_reduces_loss(self):
        grid = IncentiveGrid.from_stride(10)
        pop, samples = _synthetic(seed=4, n_samples=6000)
        cfg = TrainConfig(learning_rate=0.02, batch_size=64, bias_epochs=8, embed_dim=4)
        updates = []
        model = DipnModel.initialize(grid, pop.vocab_sizes, embed_dim=4, seed=0)
        train_bias_phase(model, samples, cfg, progress_callback=updates.append)
        self.assertEqual([update.phase for update in updates], ["blp"] * cfg.bias_epochs)
        self.assertLess(updates[-1].record.train_loss, updates[0].record.train_loss)

    def test_trained_dipn_has_no_reversed_pairs(self):
        grid = IncentiveGrid.from_stride(10)
        pop, samples = _synthetic(seed=5)
        model = train_dipn(DipnModel.initialize(grid, pop.vocab_sizes, embed_dim=4, seed=0), samples, QUICK)
        users = np.asarray(pop.categories, dtype=np.int64)
        self.assertEqual(rpr(model, users), 0.0)

    def test_weighted_samples_are_accepted(self):
        grid = IncentiveGrid.from_stride(10)
        _, samples = _synthetic(seed=6, n_samples=800)
        weighted = [sample.with_weight(2.0) for sample in samples]
        model = train_dipn(DipnModel.initialize(grid, (2, 2, 2), embed_dim=4, seed=0), weighted, QUICK)
        self.assertTrue(np.all(np.isfinite(model.predict_curves(np.array([[0, 0, 0], [1, 1, 1]])))))

    @slow_test
    def test_bias_phase_recovers_base_rates(self):
        grid = IncentiveGrid.from_stride(10)
        pop = gen_population(2, 2, 2, seed=7)
        samples = draw_dataset(pop, seed=8, n_samples=40000)
        cfg = TrainConfig(learning_rate=0.02, batch_size=128, bias_epochs=200, embed_dim=8)
        model = train_bias_phase(DipnModel.initialize(grid, pop.vocab_sizes, seed=0), samples, cfg)
        lowest: dict[tuple[int, int, int], list[int]] = {}
        for sample in samples:
            if sample.incentive < 10:
                lowest.setdefault(sample.features, []).append(sample.label)
        for features, labels in lowest.items():
            self.assertAlmostEqual(model.predict(features, 0), float(np.mean(labels)), delta=0.05)

    @slow_test
    def test_mlp_curves_can_reverse(self):
        grid = IncentiveGrid.from_stride(10)
        reversed_rates = []
        for seed in range(3):
            pop = gen_population(3, 5, 7, seed=seed)
            samples = draw_dataset(pop, seed=seed + 1, n_samples=5000)
            cfg = TrainConfig(mlp_epochs=20, seed=seed)
            model = train_mlp(new_model("mlp", grid, pop.vocab_sizes, cfg), samples, cfg)
            reversed_rates.append(rpr(model, np.asarray(pop.categories, dtype=np.int64)))
        self.assertGreater(max(reversed_rates), 0.0)



if __name__ == "__main__":
    unittest.main(verbosity=2)
