#!/usr/bin/env python3
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__))))

from promoalloc.allocator import FaceValueCost, SubgroupFaceValueCost
from promoalloc.config import (
    CONFIG_ENV_VAR,
    BudgetConfig,
    GridConfig,
    PathsConfig,
    PopulationConfig,
    RunConfig,
    config_from_dict,
    default_config_path,
    load_config,
)
from promoalloc.errors import ConfigError, InvalidArgumentError
from promoalloc.model import IncentiveGrid


class TestLoadConfig(unittest.TestCase):
    def setUp(self):
        self._temp_dir = tempfile.TemporaryDirectory()
        self.temp_dir = Path(self._temp_dir.name)

    def tearDown(self):
        self._temp_dir.cleanup()

    def _write(self, text: str) -> Path:
        path = self.temp_dir / "run.toml"
        path.write_text(text, encoding="utf-8")
        return path

    def test_defaults(self):
        config = load_config()
        self.assertEqual(config, RunConfig())
        self.assertEqual(config.grid.to_grid(), IncentiveGrid.from_stride(10))
        self.assertEqual(config.budget.mode, "per_capita")
        self.assertEqual(config.budget.values, (11.0,))
        self.assertEqual(config.train_config.seed, 0)

    def test_preset(self):
        config = load_config(preset="synthetic2")
        self.assertEqual((config.population.n1, config.population.n2, config.population.n3), (3, 5, 7))
        self.assertEqual(config.preset, "synthetic2")
        with self.assertRaises(ConfigError):
            load_config(preset="synthetic9")

    def test_precedence(self):
        path = self._write(
            'preset = "synthetic2"\n'
            "[population]\n"
            "n2 = 4\n"
            "[train]\n"
            "learning_rate = 0.05\n"
            "uplift_epochs = 3\n"
            "[seeds]\n"
            "train = 9\n"
        )
        config = load_config(path, overrides={"train": {"learning_rate": 0.2}})
        self.assertEqual(config.preset, "synthetic2")
        self.assertEqual((config.population.n1, config.population.n2, config.population.n3), (3, 4, 7))
        self.assertEqual(config.train.learning_rate, 0.2)
        self.assertEqual(config.train.uplift_epochs, 3)
        self.assertEqual(config.train_config.seed, 9)
        self.assertEqual(load_config(path, preset="synthetic1").population.n1, 2)

    def test_budget_form_replaces_inherited_one(self):
        path = self._write("[budget]\ntotal = 500.0\n")
        config = load_config(path)
        self.assertEqual(config.budget.mode, "total")
        self.assertIsNone(config.budget.per_capita)
        self.assertFalse(config.budget.is_per_capita)
        config = load_config(path, overrides={"budget": {"per_capita": 4.0}})
        self.assertEqual((config.budget.mode, config.budget.values), ("per_capita", (4.0,)))

    def test_multi_budget(self):
        path = self._write(
            "[budget]\n"
            "multi_per_capita = true\n"
            "multi = [{budget = 5.0}, {budget = 2.0, cost = \"subgroup:0=1\"}]\n"
        )
        budget = load_config(path).budget
        self.assertEqual(budget.mode, "multi")
        self.assertTrue(budget.is_per_capita)
        self.assertEqual(budget.values, (5.0, 2.0))
        self.assertEqual(budget.cost_models(), (FaceValueCost(), SubgroupFaceValueCost(0, 1)))
        self.assertEqual(budget.per_capita_limit(10), 5.0)

    def test_invalid_documents(self):
        cases = [
            "[budgets]\ntotal = 1\n",
            "[population]\nn4 = 2\n",
            "[train]\nseed = 3\n",
            "[train]\nlearning_rat = 0.1\n",
            "[train]\nalpha_upper = 0.1\nalpha_lower = 0.5\n",
            "[model]\nkind = \"gbdt\"\n",
            "[grid]\nlevels = [0, 10, 10]\n",
            "[budget]\ncost = \"tax\"\n",
            "[budget]\nmulti = [{cost = \"face_value\"}]\n",
            "[metrics]\nfuture_source = \"survey\"\n",
            "[population]\nsplits = [5000, 5000, 20000]\n",
            "[population\n",
        ]
        for text in cases:
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    load_config(self._write(text))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.temp_dir / "absent.toml")

    def test_environment_variable(self):
        path = self._write("[grid]\nstride = 25\n")
        with mock.patch.dict(os.environ, {CONFIG_ENV_VAR: str(path)}):
            self.assertEqual(default_config_path(), path)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertIsNone(default_config_path())

    def test_dict_round_trip(self):
        config = load_config(preset="synthetic1", overrides={"budget": {"total": 80.0}, "seeds": {"train": 4}})
        self.assertEqual(config_from_dict(config.to_dict(), preset="synthetic1"), config)


class TestSections(unittest.TestCase):
    def test_paths_resolve(self):
        paths = PathsConfig(output_dir="out", plan="/abs/plan_{kind}.jsonl")
        self.assertEqual(paths.resolve("model", "mlp"), Path("out") / "model_mlp.json")
        self.assertEqual(paths.resolve("population"), Path("out") / "population.json")
        self.assertEqual(paths.resolve("plan", "dipn"), Path("/abs/plan_dipn.jsonl"))
        with self.assertRaises(InvalidArgumentError):
            paths.resolve("model")

    def test_budget_needs_one_form(self):
        with self.assertRaises(ConfigError):
            BudgetConfig(total=100.0)
        with self.assertRaises(ConfigError):
            BudgetConfig(per_capita=None)
        budget = BudgetConfig(total=100.0, per_capita=None)
        self.assertEqual(budget.per_capita_limit(50), 2.0)
        self.assertIsNone(BudgetConfig(cost="response_weighted").per_capita_limit(50))

    def test_explicit_grid_levels(self):
        self.assertEqual(GridConfig(levels=(0, 5, 20)).to_grid().levels, (0.0, 5.0, 20.0))
        with self.assertRaises(ConfigError):
            GridConfig(stride=0)

    def test_population_validation(self):
        with self.assertRaises(ConfigError):
            PopulationConfig(n1=0)
        with self.assertRaises(ConfigError):
            PopulationConfig(bias_strength=-1.0)
        self.assertEqual(PopulationConfig(n_samples=None).splits, (5000, 5000, 10000))


if __name__ == "__main__":
    unittest.main(verbosity=2)
