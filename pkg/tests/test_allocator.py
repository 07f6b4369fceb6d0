#!/usr/bin/env python3
import os
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__))))

from promoalloc.allocator import (
    DualConfig,
    FaceValueCost,
    ResponseMatrix,
    ResponseWeightedCost,
    SubgroupFaceValueCost,
    assign_given_lambda,
    build_matrix,
    load_dual,
    online_decide,
    parse_cost_model,
    read_plan,
    sample_plan,
    save_dual,
    solve_budget,
    solve_dual_multi,
    solve_dual_single,
    solve_exact_small,
    solve_per_capita,
    write_plan,
)
from promoalloc.errors import (
    EXIT_INFEASIBLE,
    InfeasibleBudgetError,
    InvalidArgumentError,
    StaleDualError,
    VocabularyError,
    exit_code_for,
)
from promoalloc.model import IncentiveGrid, model_checksum
from tests.utils.fixtures import random_matrix, small_grid, tiny_dipn


def _relative_gap(value: float, reference: float) -> float:
    return abs(value - reference) / max(abs(reference), 1e-12)


def _budget_slack(budget: float) -> float:
    return 1e-9 * max(1.0, abs(budget))


class TestSingleBudget(unittest.TestCase):
    def test_matches_lp_optimum_on_random_instances(self):
        for seed in range(50):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(seed)
                matrix = random_matrix(rng, n=8, d=5)
                budget = float(rng.uniform(0.1, 0.9)) * float(matrix.g[0].max(axis=1).sum())
                dual, plan = solve_dual_single(matrix, budget)
                exact = solve_exact_small(matrix, budget)
                self.assertLessEqual(plan.expected_spend[0], budget + _budget_slack(budget))
                self.assertLess(_relative_gap(plan.expected_objective, exact.lp_objective), 1e-6)
                self.assertLessEqual(exact.ilp_objective, exact.lp_objective + 1e-12)
                self.assertGreaterEqual(dual.lambdas[0], 0.0)

    def test_at_most_one_mixing_breakpoint(self):
        rng = np.random.default_rng(123)
        matrix = random_matrix(rng, n=30, d=6)
        dual, plan = solve_dual_single(matrix, 40.0)
        for i in plan.boundary_users:
            self.assertEqual(np.count_nonzero(plan.z[i]), 2)
        self.assertAlmostEqual(plan.expected_spend[0], 40.0, places=9)
        self.assertTrue(dual.converged)

    def test_huge_budget_needs_no_multiplier(self):
        matrix = random_matrix(np.random.default_rng(1), n=10, d=4)
        dual, plan = solve_budget(matrix, 1e9)
        self.assertEqual(dual.lambdas[0], 0.0)
        np.testing.assert_array_equal(plan.levels, np.argmax(matrix.f, axis=1))

    def test_budget_at_minimum_spend(self):
        f = np.array([[0.1, 0.4, 0.5], [0.2, 0.25, 0.9]])
        matrix = ResponseMatrix.from_arrays(f, np.tile([1.0, 2.0, 3.0], (2, 1)))
        _, plan = solve_dual_single(matrix, 2.0)
        np.testing.assert_array_equal(plan.levels, [0, 0])
        self.assertEqual(plan.expected_spend[0], 2.0)

    def test_budget_below_minimum_spend(self):
        matrix = ResponseMatrix.from_arrays(np.full((3, 2), 0.5), np.tile([1.0, 2.0], (3, 1)))
        with self.assertRaises(InfeasibleBudgetError) as ctx:
            solve_dual_single(matrix, 2.5)
        self.assertEqual(ctx.exception.minimum_spend, 3.0)
        self.assertEqual(exit_code_for(ctx.exception), EXIT_INFEASIBLE)

    def test_spend_falls_as_multiplier_rises(self):
        matrix = random_matrix(np.random.default_rng(2), n=50, d=6)
        spends = [assign_given_lambda(matrix, lam).expected_spend[0] for lam in np.linspace(0.0, 0.5, 26)]
        self.assertTrue(all(b <= a for a, b in zip(spends, spends[1:])))

    def test_negative_multiplier_is_rejected(self):
        matrix = random_matrix(np.random.default_rng(3), n=3, d=3)
        with self.assertRaises(InvalidArgumentError):
            assign_given_lambda(matrix, -0.1)
        with self.assertRaises(InvalidArgumentError):
            assign_given_lambda(matrix, [0.1, 0.2])

    def test_empty_user_batch(self):
        matrix = ResponseMatrix.from_arrays(np.zeros((0, 3)), np.zeros((0, 3)))
        dual, plan = solve_dual_single(matrix, 0.0)
        self.assertEqual(plan.n_users, 0)
        self.assertEqual(dual.objective, 0.0)

    def test_loose_tolerance_stops_bisection_earlier(self):
        matrix = random_matrix(np.random.default_rng(123), n=30, d=6)
        loose, loose_plan = solve_dual_single(matrix, 40.0, DualConfig(tol_rel=0.25))
        tight, tight_plan = solve_dual_single(matrix, 40.0, DualConfig(tol_rel=1e-12))
        self.assertLess(loose.iterations, tight.iterations)
        self.assertGreaterEqual(loose.lambdas[0], tight.lambdas[0])
        self.assertLessEqual(loose_plan.expected_spend[0], 40.0 + _budget_slack(40.0))
        self.assertLessEqual(loose_plan.expected_objective, tight_plan.expected_objective + 1e-9)

    def test_assignment_for_fixed_multiplier(self):
        matrix = ResponseMatrix.from_arrays([[0.2, 0.8]], [[0.0, 10.0]])
        np.testing.assert_array_equal(assign_given_lambda(matrix, 0.05).levels, [1])
        np.testing.assert_array_equal(assign_given_lambda(matrix, 1e9).levels, [0])

    def test_scaling_responses_and_multiplier_keeps_levels(self):
        matrix = random_matrix(np.random.default_rng(14), n=40, d=6)
        scaled = ResponseMatrix.from_arrays(matrix.f * 0.5, matrix.g)
        for lam in (0.0, 0.02, 0.05, 0.1, 0.3):
            with self.subTest(lam=lam):
                np.testing.assert_array_equal(
                    assign_given_lambda(scaled, lam * 0.5).levels,
                    assign_given_lambda(matrix, lam).levels,
                )

    def test_repeated_solves_are_identical(self):
        matrix = random_matrix(np.random.default_rng(15), n=30, d=6)
        first_dual, first = solve_dual_single(matrix, 35.0)
        second_dual, second = solve_dual_single(matrix, 35.0)
        np.testing.assert_array_equal(first.z, second.z)
        np.testing.assert_array_equal(first_dual.lambdas, second_dual.lambdas)


class TestMultipleBudgets(unittest.TestCase):
    def test_two_constraints_match_lp(self):
        for seed in range(20):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(500 + seed)
                matrix = random_matrix(rng, n=6, d=4, k=2)
                pick = rng.integers(0, 4, size=6)
                rows = np.arange(6)
                budgets = np.asarray([matrix.g[k, rows, pick].sum() for k in range(2)]) + 1e-6
                _, plan = solve_dual_multi(matrix, budgets)
                exact = solve_exact_small(matrix, budgets)
                self.assertTrue(np.all(plan.expected_spend <= budgets + 1e-9 * np.maximum(1.0, budgets)))
                self.assertLess(_relative_gap(plan.expected_objective, exact.lp_objective), 1e-3)

    def test_single_layer_agrees_with_bisection(self):
        matrix = random_matrix(np.random.default_rng(9), n=40, d=6)
        single, _ = solve_dual_single(matrix, 55.0)
        multi, _ = solve_dual_multi(matrix, [55.0])
        self.assertLess(_relative_gap(multi.objective, single.objective), 1e-5)

    def test_jointly_infeasible_budgets(self):
        f = np.array([[0.2, 0.8], [0.3, 0.6]])
        g = np.stack([np.tile([0.0, 1.0], (2, 1)), np.tile([1.0, 0.0], (2, 1))])
        matrix = ResponseMatrix.from_arrays(f, g)
        with self.assertRaises(InfeasibleBudgetError) as ctx:
            solve_dual_multi(matrix, [0.5, 0.5])
        self.assertEqual(len(ctx.exception.violation), 2)

    def test_single_constraint_below_minimum(self):
        matrix = random_matrix(np.random.default_rng(4), n=5, d=3, k=2)
        with self.assertRaises(InfeasibleBudgetError):
            solve_dual_multi(matrix, [10.0, -1.0])

    def test_budget_count_must_match(self):
        matrix = random_matrix(np.random.default_rng(5), n=5, d=3, k=2)
        with self.assertRaises(InvalidArgumentError):
            solve_dual_multi(matrix, [1.0])

    def test_single_layer_is_recovered_by_repair(self):
        matrix = random_matrix(np.random.default_rng(9), n=40, d=6)
        multi, _ = solve_dual_multi(matrix, [55.0])
        self.assertEqual(multi.diagnostics["recovery"], "repair")
        self.assertTrue(multi.converged)

    def test_slack_second_budget_matches_single(self):
        matrix = random_matrix(np.random.default_rng(11), n=40, d=6, k=2)
        multi, plan = solve_dual_multi(matrix, [55.0, 1e6])
        single, _ = solve_dual_single(ResponseMatrix.from_arrays(matrix.f, matrix.g[:1]), 55.0)
        self.assertEqual(multi.diagnostics["recovery"], "repair")
        self.assertEqual(multi.lambdas[1], 0.0)
        self.assertLessEqual(plan.expected_spend[0], 55.0 + _budget_slack(55.0))
        self.assertLess(_relative_gap(plan.expected_objective, single.objective), 1e-6)

    def test_repeated_solves_are_identical(self):
        rng = np.random.default_rng(16)
        matrix = random_matrix(rng, n=20, d=4, k=2)
        pick = rng.integers(0, 4, size=20)
        budgets = [float(matrix.g[k, np.arange(20), pick].sum()) for k in range(2)]
        first_dual, first = solve_dual_multi(matrix, budgets)
        second_dual, second = solve_dual_multi(matrix, budgets)
        np.testing.assert_array_equal(first.z, second.z)
        np.testing.assert_array_equal(first_dual.lambdas, second_dual.lambdas)

    def test_unrepairable_budgets_fall_back_with_warning(self):
        f = np.array([[0.2, 0.8], [0.3, 0.6]])
        g = np.stack([np.tile([0.0, 1.0], (2, 1)), np.tile([1.0, 0.0], (2, 1))])
        matrix = ResponseMatrix.from_arrays(f, g)
        with self.assertLogs("promoalloc.allocator.dual", level="WARNING") as logs:
            with self.assertRaises(InfeasibleBudgetError):
                solve_dual_multi(matrix, [0.5, 0.5])
        self.assertTrue(any("Coordinate repair" in line for line in logs.output))


class TestPerCapita(unittest.TestCase):
    def test_face_value_limit_equals_total_budget(self):
        matrix = random_matrix(np.random.default_rng(6), n=40, d=6)
        dual, plan = solve_per_capita(matrix, 1.5)
        _, total = solve_dual_single(matrix, 1.5 * 40)
        self.assertEqual(dual.mode, "per_capita")
        self.assertLessEqual(plan.expected_spend[0] / 40, 1.5 + 1e-9)
        self.assertLess(_relative_gap(plan.expected_objective, total.expected_objective), 1e-5)
        np.testing.assert_array_equal(plan.g, matrix.g)

    def test_dispatch(self):
        matrix = random_matrix(np.random.default_rng(7), n=20, d=4)
        dual, _ = solve_budget(matrix, 1.0, per_capita=True)
        self.assertEqual(dual.mode, "per_capita")
        np.testing.assert_array_equal(dual.budgets, [1.0])


class TestOracle(unittest.TestCase):
    def test_hand_example(self):
        matrix = ResponseMatrix.from_arrays([[0.1, 0.5], [0.2, 0.3]], [[0.0, 1.0], [0.0, 1.0]])
        exact = solve_exact_small(matrix, 1.0)
        self.assertAlmostEqual(exact.lp_objective, 0.7, places=12)
        self.assertAlmostEqual(exact.ilp_objective, 0.7, places=12)
        exact = solve_exact_small(matrix, 0.5)
        self.assertAlmostEqual(exact.lp_objective, 0.5, places=12)
        self.assertAlmostEqual(exact.ilp_objective, 0.3, places=12)
        np.testing.assert_array_equal(exact.ilp_levels, [0, 0])

    def test_two_constraint_lp(self):
        g = np.stack([np.tile([0.0, 1.0], (2, 1)), np.array([[0.0, 1.0], [0.0, 3.0]])])
        matrix = ResponseMatrix.from_arrays([[0.1, 0.5], [0.2, 0.9]], g)
        exact = solve_exact_small(matrix, [2.0, 2.0])
        self.assertAlmostEqual(exact.lp_objective, 0.5 + 0.2 + 0.7 / 3, places=8)
        np.testing.assert_allclose(exact.lp_z.sum(axis=1), 1.0)
        self.assertTrue(np.all(np.einsum("knd,nd->k", g, exact.lp_z) <= 2.0 + 1e-9))

    def test_slack_second_budget_matches_hull_greedy(self):
        for seed in range(10):
            with self.subTest(seed=seed):
                rng = np.random.default_rng(700 + seed)
                matrix = random_matrix(rng, n=6, d=4, k=2)
                budget = float(rng.uniform(0.2, 0.8)) * float(matrix.g[0].max(axis=1).sum())
                two = solve_exact_small(matrix, [budget, 1e6])
                one = solve_exact_small(ResponseMatrix.from_arrays(matrix.f, matrix.g[:1]), budget)
                self.assertAlmostEqual(two.lp_objective, one.lp_objective, places=9)

    def test_jointly_infeasible_two_constraints(self):
        f = np.array([[0.2, 0.8], [0.3, 0.6]])
        g = np.stack([np.tile([0.0, 1.0], (2, 1)), np.tile([1.0, 0.0], (2, 1))])
        with self.assertRaises(InfeasibleBudgetError):
            solve_exact_small(ResponseMatrix.from_arrays(f, g), [0.5, 0.5])

    def test_size_bound(self):
        matrix = random_matrix(np.random.default_rng(8), n=9, d=5)
        with self.assertRaises(InvalidArgumentError):
            solve_exact_small(matrix, 10.0)


class TestMatrix(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(InvalidArgumentError):
            ResponseMatrix.from_arrays([[0.1, 1.2]], [[0.0, 1.0]])
        with self.assertRaises(InvalidArgumentError):
            ResponseMatrix.from_arrays([[0.1, 0.2]], [[0.0, 1.0, 2.0]])
        with self.assertRaises(InvalidArgumentError):
            ResponseMatrix.from_arrays([[0.1, 0.2]], [[0.0, np.inf]])

    def test_build_from_model(self):
        grid = IncentiveGrid.from_stride(25)
        model = tiny_dipn(0, grid, vocab_sizes=(2, 3, 2))
        users = np.array([[0, 0, 0], [1, 2, 1], [1, 0, 1]])
        matrix = build_matrix(
            model, users, cost_models=(FaceValueCost(), ResponseWeightedCost(), SubgroupFaceValueCost(0, 1))
        )
        curves = model.predict_curves(users)
        np.testing.assert_array_equal(matrix.f, curves)
        np.testing.assert_array_equal(matrix.g[0], np.tile(grid.as_array(), (3, 1)))
        np.testing.assert_allclose(matrix.g[1], curves * grid.as_array())
        np.testing.assert_array_equal(matrix.g[2][0], np.zeros(grid.size))
        np.testing.assert_array_equal(matrix.g[2][1], grid.as_array())
        self.assertEqual(matrix.cost_names, ("face_value", "response_weighted", "subgroup:0=1"))

    def test_build_rejects_unknown_category(self):
        model = tiny_dipn(1, small_grid(), vocab_sizes=(2, 2, 2))
        with self.assertRaises(VocabularyError):
            build_matrix(model, [[0, 0, 2]])

    def test_parse_cost_model(self):
        self.assertEqual(parse_cost_model("face_value"), FaceValueCost())
        self.assertEqual(parse_cost_model(" response_weighted "), ResponseWeightedCost())
        self.assertEqual(parse_cost_model("subgroup:2=1"), SubgroupFaceValueCost(2, 1))
        for spec in ("subgroup:x", "subgroup:4=1", "tax"):
            with self.assertRaises(InvalidArgumentError):
                parse_cost_model(spec)

    def test_checksum_tracks_contents(self):
        matrix = random_matrix(np.random.default_rng(10), n=4, d=3)
        self.assertEqual(matrix.checksum(), replace(matrix).checksum())
        self.assertNotEqual(matrix.checksum(), matrix.with_costs(matrix.g * 2.0).checksum())


class TestPlans(unittest.TestCase):
    def test_sampling_deterministic_plan(self):
        matrix = random_matrix(np.random.default_rng(11), n=10, d=4)
        plan = assign_given_lambda(matrix, 0.05)
        sampled = sample_plan(plan, seed=0)
        np.testing.assert_array_equal(sampled.levels, plan.levels)
        self.assertAlmostEqual(sampled.realized_spend[0], plan.expected_spend[0], places=12)
        self.assertAlmostEqual(sampled.realized_objective, plan.expected_objective, places=12)

    def test_sampling_boundary_users(self):
        matrix = ResponseMatrix.from_arrays(np.tile([0.2, 0.6], (400, 1)), np.tile([0.0, 1.0], (400, 1)))
        _, plan = solve_dual_single(matrix, 100.0)
        self.assertEqual(len(plan.boundary_users), 400)
        spends = [sample_plan(plan, seed=seed).realized_spend[0] for seed in range(20)]
        self.assertAlmostEqual(float(np.mean(spends)), 100.0, delta=10.0)
        self.assertEqual(sample_plan(plan, seed=3).realized_spend[0], sample_plan(plan, seed=3).realized_spend[0])

    def test_plan_and_dual_files(self):
        grid = IncentiveGrid.from_stride(25)
        model = tiny_dipn(2, grid, vocab_sizes=(2, 2, 2))
        users = np.array([[0, 0, 0], [1, 1, 1], [0, 1, 0], [1, 0, 1]])
        matrix = build_matrix(model, users)
        dual, plan = solve_dual_single(matrix, 60.0)
        with tempfile.TemporaryDirectory() as temp_dir:
            plan_path = write_plan(Path(temp_dir) / "plan.jsonl", plan, dual)
            dual_path = save_dual(Path(temp_dir) / "dual.json", dual)
            loaded_plan = read_plan(plan_path)
            loaded_dual = load_dual(dual_path)
        np.testing.assert_array_equal(loaded_plan.z, plan.z)
        np.testing.assert_array_equal(loaded_plan.users, users)
        self.assertEqual(loaded_plan.expected_objective, plan.expected_objective)
        np.testing.assert_array_equal(loaded_dual.lambdas, dual.lambdas)
        self.assertEqual(loaded_dual.grid, dual.grid)
        self.assertEqual(loaded_dual.matrix_checksum, matrix.checksum())


class TestOnlineDecision(unittest.TestCase):
    def setUp(self):
        self.grid = IncentiveGrid.from_stride(20)
        self.model = tiny_dipn(5, self.grid, vocab_sizes=(3, 2, 2))
        rng = np.random.default_rng(6)
        self.users = np.stack([rng.integers(0, size, size=60) for size in (3, 2, 2)], axis=1)
        self.matrix = build_matrix(self.model, self.users)
        dual, self.plan = solve_dual_single(self.matrix, 600.0)
        self.dual = replace(dual, model_checksum=model_checksum(self.model))

    def test_reproduces_batch_assignment(self):
        boundary = set(int(i) for i in self.plan.boundary_users)
        for i, row in enumerate(self.users):
            if i in boundary:
                continue
            self.assertEqual(online_decide(self.dual, self.model, row), int(self.plan.levels[i]))

    def test_model_mismatch(self):
        other = tiny_dipn(6, self.grid, vocab_sizes=(3, 2, 2))
        with self.assertRaises(StaleDualError):
            online_decide(self.dual, other, (0, 0, 0), model_checksum=model_checksum(other))
        level = online_decide(self.dual, self.model, (0, 0, 0), model_checksum=model_checksum(self.model))
        self.assertIn(level, range(self.grid.size))

    def test_grid_and_cost_mismatch(self):
        other = tiny_dipn(7, IncentiveGrid.from_stride(25), vocab_sizes=(3, 2, 2))
        with self.assertRaises(StaleDualError):
            online_decide(self.dual, other, (0, 0, 0))
        with self.assertRaises(StaleDualError):
            online_decide(self.dual, self.model, (0, 0, 0), cost_models=(FaceValueCost(), ResponseWeightedCost()))


if __name__ == "__main__":
    unittest.main(verbosity=2)
