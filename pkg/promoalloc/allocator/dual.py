"""Lagrangian-dual budget allocation.

For fixed multipliers every user independently takes the level maximizing
f - sum_k lambda_k g_k. A single budget is solved by bisection on the scalar
multiplier (spend is a nonincreasing step function of it) with one two-point
mix at the final breakpoint. Several budgets are solved by projected
subgradient descent on the dual, then repaired one constraint at a time in
index order: each multiplier is bisected to its smallest feasible value with
the others held, and the users that switch at a binding breakpoint are mixed
until that budget binds. A small LP over the tied users is the last resort
when the repaired plan cannot be certified.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from ..errors import DualBracketError, InfeasibleBudgetError, InvalidArgumentError, StaleDualError
from ..model.grid import IncentiveGrid
from ..model.protocol import ResponseModelProtocol
from .costs import CostModelProtocol, FaceValueCost
from .matrix import ResponseMatrix, cost_layers
from .plan import AllocationPlan, DualSolution, one_hot_plan

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualConfig:
    tol_rel: float = 1e-6
    max_bisections: int = 200
    interval_tol: float = 1e-12
    subgradient_iterations: int = 5000
    eta0: float = 1.0
    tie_tolerances: tuple[float, ...] = (1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1)
    certificate_tol: float = 1e-6
    feasibility_tol: float = 1e-9
    repair_passes: int = 50
    repair_gap_rel: float = 1e-4

    def __post_init__(self):
        if self.tol_rel <= 0:
            raise InvalidArgumentError(f"tol_rel must be > 0, got {self.tol_rel}")
        if self.subgradient_iterations < 1:
            raise InvalidArgumentError(f"subgradient_iterations must be >= 1, got {self.subgradient_iterations}")
        if self.repair_passes < 1:
            raise InvalidArgumentError(f"repair_passes must be >= 1, got {self.repair_passes}")
        if self.eta0 <= 0:
            raise InvalidArgumentError(f"eta0 must be > 0, got {self.eta0}")


DEFAULT_DUAL_CONFIG = DualConfig()


def lagrangian_scores(f: np.ndarray, g: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    return f - np.tensordot(lambdas, g, axes=1)


def choose_levels(f: np.ndarray, g: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Per-row argmax of the Lagrangian score; exact ties go to the lowest total cost, then the lowest index."""
    scores = lagrangian_scores(f, g, lambdas)
    if scores.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    best = scores.max(axis=1, keepdims=True)
    tie_cost = np.where(scores == best, g.sum(axis=0), np.inf)
    return np.argmin(tie_cost, axis=1)


def assign_given_lambda(matrix: ResponseMatrix, lambdas: Sequence[float] | np.ndarray | float) -> AllocationPlan:
    values = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    if values.shape != (matrix.n_constraints,):
        raise InvalidArgumentError(f"Expected {matrix.n_constraints} multipliers, got {values.tolist()}")
    if np.any(values < 0):
        raise InvalidArgumentError(f"Multipliers must be >= 0, got {values.tolist()}")
    return one_hot_plan(matrix, choose_levels(matrix.f, matrix.g, values), values)


def _spend(g: np.ndarray, choice: np.ndarray) -> np.ndarray:
    rows = np.arange(g.shape[1])
    return np.asarray([math.fsum(g[k, rows, choice]) for k in range(g.shape[0])])


def _dual_value(f: np.ndarray, g: np.ndarray, lambdas: np.ndarray, budgets: np.ndarray) -> float:
    scores = lagrangian_scores(f, g, lambdas)
    best = scores.max(axis=1) if scores.shape[0] else np.zeros(0)
    return math.fsum(best) + float(lambdas @ budgets)


def _solution(
    matrix: ResponseMatrix,
    plan: AllocationPlan,
    lambdas: np.ndarray,
    budgets: np.ndarray,
    converged: bool,
    iterations: int,
    mode: str = "total",
    **diagnostics,
) -> DualSolution:
    return DualSolution(
        lambdas=lambdas,
        converged=converged,
        iterations=iterations,
        spend=plan.expected_spend,
        objective=plan.expected_objective,
        dual_value=_dual_value(matrix.f, matrix.g, lambdas, budgets),
        budgets=budgets,
        grid=matrix.grid,
        cost_names=matrix.cost_names,
        mode=mode,
        matrix_checksum=matrix.checksum(),
        diagnostics=diagnostics,
    )


def _lambda_max(f: np.ndarray, g: np.ndarray) -> float:
    """Smallest multiplier beyond which every user sits at a minimum-cost level."""
    g_min = g.min(axis=1, keepdims=True)
    at_min = g == g_min
    f_at_min = np.where(at_min, f, -np.inf).max(axis=1, keepdims=True)
    dearer = ~at_min
    if not np.any(dearer):
        return 0.0
    ratios = (f - f_at_min)[dearer] / (g - g_min)[dearer]
    return max(float(np.max(ratios)), 0.0) * (1.0 + 1e-9) + 1e-12


@dataclass(frozen=True)
class _Bracket:
    lo: float
    hi: float
    choice_lo: np.ndarray
    choice_hi: np.ndarray
    spend_lo: float
    spend_hi: float
    iterations: int


def _bisect(
    spend_at: Callable[[float], tuple[np.ndarray, float]],
    lo: float,
    hi: float,
    target: float,
    config: DualConfig,
) -> _Bracket:
    """Shrink [lo, hi] with spend(lo) > target >= spend(hi).

    Stops once the budget left unspent at `hi` is within tol_rel of the
    target, the interval collapses, or max_bisections is reached.
    """
    choice_lo, spend_lo = spend_at(lo)
    choice_hi, spend_hi = spend_at(hi)
    gap_tol = config.tol_rel * max(1.0, abs(target))
    iterations = 0
    while iterations < config.max_bisections:
        if target - spend_hi <= gap_tol or hi - lo < config.interval_tol * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        choice_mid, spend_mid = spend_at(mid)
        if spend_mid > target:
            lo, choice_lo, spend_lo = mid, choice_mid, spend_mid
        else:
            hi, choice_hi, spend_hi = mid, choice_mid, spend_mid
        iterations += 1
    return _Bracket(lo, hi, choice_lo, choice_hi, spend_lo, spend_hi, iterations)


def solve_dual_single(
    matrix: ResponseMatrix,
    budget: float,
    config: DualConfig = DEFAULT_DUAL_CONFIG,
) -> tuple[DualSolution, AllocationPlan]:
    if matrix.n_constraints != 1:
        raise InvalidArgumentError(f"solve_dual_single needs exactly one cost layer, got {matrix.n_constraints}")
    f, g = matrix.f, matrix.g
    budgets = np.asarray([float(budget)])
    minimum = math.fsum(g[0].min(axis=1)) if matrix.n_users else 0.0
    slack = config.feasibility_tol * max(1.0, abs(budget))
    if budget < minimum - slack:
        raise InfeasibleBudgetError(
            f"Budget {budget:g} is below the minimum possible spend {minimum:g}",
            minimum_spend=minimum,
        )
    target = max(float(budget), minimum)

    def spend_at(lam: float) -> tuple[np.ndarray, float]:
        choice = choose_levels(f, g, np.asarray([lam]))
        return choice, float(_spend(g, choice)[0])

    zero = np.zeros(1)
    choice_zero, spend_zero = spend_at(0.0)
    if spend_zero <= target:
        plan = one_hot_plan(matrix, choice_zero, zero)
        return _solution(matrix, plan, zero, budgets, True, 0, minimum_spend=minimum), plan

    upper = _lambda_max(f, g[0])
    _, spend_upper = spend_at(upper)
    if spend_upper > target:
        raise DualBracketError(
            f"Spend {spend_upper:g} at the bracket bound lambda={upper:g} still exceeds the budget {target:g}"
        )
    bracket = _bisect(spend_at, 0.0, upper, target, config)
    lo, hi, iterations = bracket.lo, bracket.hi, bracket.iterations
    choice_lo, choice_hi = bracket.choice_lo, bracket.choice_hi
    spend_lo, spend_hi = bracket.spend_lo, bracket.spend_hi
    logger.debug("Bisection stopped after %d steps at lambda=%.12g", iterations, hi)

    lambdas = np.asarray([hi])
    z = np.zeros_like(f)
    rows = np.arange(matrix.n_users)
    z[rows, choice_hi] = 1.0
    boundary = np.flatnonzero(choice_hi != choice_lo)
    theta = 0.0
    if spend_hi < target and boundary.size:
        theta = (target - spend_hi) / (spend_lo - spend_hi)
        z[boundary, choice_hi[boundary]] = 1.0 - theta
        z[boundary, choice_lo[boundary]] = theta
        if theta <= 0.0 or theta >= 1.0:
            z[boundary] = 0.0
            z[boundary, choice_hi[boundary]] = 1.0
            theta = 0.0
    plan = AllocationPlan.from_matrix(matrix, z, lambdas)
    if plan.expected_spend[0] > target + slack:
        # Rounding in the mix; fall back to the feasible side.
        plan = one_hot_plan(matrix, choice_hi, lambdas)
        theta = 0.0
    solution = _solution(
        matrix,
        plan,
        lambdas,
        budgets,
        True,
        iterations,
        minimum_spend=minimum,
        lambda_interval=[lo, hi],
        boundary_users=int(boundary.size) if theta else 0,
        mix_probability=theta,
    )
    return solution, plan


def _normalized(g: np.ndarray, budgets: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = np.abs(g).reshape(g.shape[0], -1).max(axis=1) if g.size else np.ones(g.shape[0])
    scale = np.where(scale > 0, scale, 1.0)
    return g / scale[:, None, None], budgets / scale, scale


def _subgradient(
    f: np.ndarray,
    g: np.ndarray,
    budgets: np.ndarray,
    config: DualConfig,
) -> tuple[np.ndarray, float, int]:
    n = max(f.shape[0], 1)
    rows = np.arange(f.shape[0])
    tolerance = config.feasibility_tol * np.maximum(1.0, np.abs(budgets))
    lambdas = np.zeros(g.shape[0])
    best_lambdas = lambdas.copy()
    best_value = math.inf
    for t in range(1, config.subgradient_iterations + 1):
        choice = choose_levels(f, g, lambdas)
        spend = _spend(g, choice)
        value = _dual_value(f, g, lambdas, budgets)
        if value < best_value:
            best_value, best_lambdas = value, lambdas.copy()
        primal = math.fsum(f[rows, choice])
        if np.all(spend <= budgets + tolerance) and value - primal <= config.certificate_tol * max(1.0, abs(primal)):
            return lambdas, value, t
        lambdas = np.maximum(0.0, lambdas + config.eta0 / math.sqrt(t) * (spend - budgets) / n)
    return best_lambdas, best_value, config.subgradient_iterations


def _coordinate_bracket(
    f: np.ndarray,
    g: np.ndarray,
    targets: np.ndarray,
    lambdas: np.ndarray,
    k: int,
    config: DualConfig,
) -> _Bracket | None:
    """Bracket of the smallest lambda_k, the others held, whose spend on constraint k fits.

    None when lambda_k = 0 already fits.
    """
    rows = np.arange(f.shape[0])

    def spend_at(lam: float) -> tuple[np.ndarray, float]:
        trial = lambdas.copy()
        trial[k] = lam
        choice = choose_levels(f, g, trial)
        return choice, math.fsum(g[k, rows, choice])

    _, spend_zero = spend_at(0.0)
    if spend_zero <= targets[k]:
        return None
    others = np.delete(np.arange(g.shape[0]), k)
    held = f - np.tensordot(lambdas[others], g[others], axes=1)
    return _bisect(spend_at, 0.0, _lambda_max(held, g[k]), float(targets[k]), config)


def _repair(
    f: np.ndarray,
    g: np.ndarray,
    budgets: np.ndarray,
    start: np.ndarray,
    config: DualConfig,
) -> tuple[np.ndarray, np.ndarray, int] | None:
    """Coordinate passes over the multipliers in index order, then boundary mixing per binding constraint.

    Returns (lambdas, z, passes), or None when the passes end on a one-hot
    plan that still overshoots a budget.
    """
    n, k_count = f.shape[0], g.shape[0]
    rows = np.arange(n)
    tolerance = config.feasibility_tol * np.maximum(1.0, np.abs(budgets))
    minimum = np.asarray([math.fsum(layer.min(axis=1)) for layer in g])
    targets = np.maximum(budgets, minimum)
    lambdas = start.copy()
    stable = False
    passes = 0
    for passes in range(1, config.repair_passes + 1):
        previous = lambdas.copy()
        for k in range(k_count):
            bracket = _coordinate_bracket(f, g, targets, lambdas, k, config)
            lambdas[k] = 0.0 if bracket is None else bracket.hi
        stable = bool(np.all(np.abs(lambdas - previous) <= 1e-12 * np.maximum(1.0, np.abs(previous))))
        if stable:
            break

    choice = choose_levels(f, g, lambdas)
    if not np.all(_spend(g, choice) <= budgets + tolerance):
        return None
    z = np.zeros_like(f)
    z[rows, choice] = 1.0
    if not stable:
        return lambdas, z, passes

    mixed = np.zeros(n, dtype=bool)
    for k in range(k_count):
        if lambdas[k] <= 0.0:
            continue
        bracket = _coordinate_bracket(f, g, targets, lambdas, k, config)
        if bracket is None:
            continue
        boundary = np.flatnonzero((bracket.choice_lo != choice) & ~mixed)
        if boundary.size == 0:
            continue
        hi_side, lo_side = choice[boundary], bracket.choice_lo[boundary]
        gain = math.fsum(f[boundary, lo_side] - f[boundary, hi_side])
        if gain <= 0.0:
            continue
        delta = g[:, boundary, lo_side].sum(axis=1) - g[:, boundary, hi_side].sum(axis=1)
        room = budgets - np.einsum("knd,nd->k", g, z)
        rising = delta > 0
        theta = min(1.0, float(np.min(room[rising] / delta[rising]))) if np.any(rising) else 1.0
        if theta <= 0.0:
            continue
        z[boundary, hi_side] = 1.0 - theta
        z[boundary, lo_side] = theta
        mixed[boundary] = True
    return lambdas, z, passes


def _restricted_lp(
    f: np.ndarray,
    g: np.ndarray,
    budgets: np.ndarray,
    candidates: np.ndarray,
    config: DualConfig,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Solve the allocation LP with each user limited to its candidate levels.

    Users with one candidate are fixed. Returns (z, lp multipliers) or None
    when the restricted problem is infeasible.
    """
    k = g.shape[0]
    counts = candidates.sum(axis=1)
    fixed = np.flatnonzero(counts == 1)
    free = np.flatnonzero(counts > 1)
    z = np.zeros_like(f)
    z[fixed, np.argmax(candidates[fixed], axis=1)] = 1.0
    remaining = budgets - np.einsum("knd,nd->k", g, z)
    if free.size == 0:
        if np.all(remaining >= -config.feasibility_tol * np.maximum(1.0, np.abs(budgets))):
            return z, np.zeros(k)
        return None

    users, levels = np.nonzero(candidates[free])
    row_of_var = users
    users = free[users]
    var_count = users.size
    a_eq = coo_matrix(
        (np.ones(var_count), (row_of_var, np.arange(var_count))),
        shape=(free.size, var_count),
    ).tocsr()
    a_ub = g[:, users, levels]

    # HiGHS may overshoot a row by its feasibility tolerance; one tightened retry absorbs that.
    for _ in range(2):
        result = linprog(
            c=-f[users, levels],
            A_ub=a_ub,
            b_ub=remaining,
            A_eq=a_eq,
            b_eq=np.ones(free.size),
            bounds=(0.0, None),
            method="highs",
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if result.status != 0:
            return None
        values = np.clip(result.x, 0.0, None)
        values[values < 1e-12] = 0.0
        z[users, levels] = values
        z[free] /= z[free].sum(axis=1, keepdims=True)
        overshoot = np.einsum("knd,nd->k", g[:, free, :], z[free]) - remaining
        if np.all(overshoot <= 0.0):
            break
        remaining = remaining - np.maximum(overshoot, 0.0)
    multipliers = np.maximum(0.0, -np.asarray(result.ineqlin.marginals, dtype=np.float64))
    return z, multipliers


def solve_dual_multi(
    matrix: ResponseMatrix,
    budgets: Sequence[float] | np.ndarray,
    config: DualConfig = DEFAULT_DUAL_CONFIG,
    mode: str = "total",
) -> tuple[DualSolution, AllocationPlan]:
    budgets = np.asarray(budgets, dtype=np.float64).reshape(-1)
    k = matrix.n_constraints
    if budgets.shape != (k,):
        raise InvalidArgumentError(f"Expected {k} budgets, got {budgets.tolist()}")
    f = matrix.f
    tolerance = config.feasibility_tol * np.maximum(1.0, np.abs(budgets))

    minimum = np.asarray([math.fsum(layer.min(axis=1)) for layer in matrix.g]) if matrix.n_users else np.zeros(k)
    short = np.flatnonzero(budgets < minimum - tolerance)
    if short.size:
        first = int(short[0])
        raise InfeasibleBudgetError(
            f"Budget {budgets[first]:g} for constraint {first} is below its minimum possible spend {minimum[first]:g}",
            minimum_spend=float(minimum[first]),
            best_lambda=[0.0] * k,
            violation=(minimum - budgets).tolist(),
        )

    zero = np.zeros(k)
    choice = choose_levels(f, matrix.g, zero)
    if np.all(_spend(matrix.g, choice) <= budgets + tolerance):
        plan = one_hot_plan(matrix, choice, zero)
        return _solution(matrix, plan, zero, budgets, True, 0, mode=mode), plan

    g_n, budgets_n, scale = _normalized(matrix.g, budgets)
    best_n, _, iterations = _subgradient(f, g_n, budgets_n, config)
    logger.debug("Subgradient best multipliers (normalized): %s", best_n.tolist())

    repaired = _repair(f, g_n, budgets_n, best_n, config)
    if repaired is not None:
        lambdas_n, z, passes = repaired
        plan = AllocationPlan.from_matrix(matrix, z, lambdas_n / scale)
        primal = plan.expected_objective
        gap = _dual_value(f, g_n, lambdas_n, budgets_n) - primal
        feasible = np.all(plan.expected_spend <= budgets + tolerance)
        if feasible and gap <= config.repair_gap_rel * max(1.0, abs(primal)):
            solution = _solution(
                matrix,
                plan,
                lambdas_n / scale,
                budgets,
                gap <= config.certificate_tol * max(1.0, abs(primal)),
                iterations,
                mode=mode,
                recovery="repair",
                repair_passes=passes,
                certificate_gap=gap,
                subgradient_lambdas=(best_n / scale).tolist(),
            )
            return solution, plan
        logger.warning("Coordinate repair left a duality gap of %.3g; solving the tied-user LP", gap)
    else:
        logger.warning("Coordinate repair ended over budget; solving the tied-user LP")

    scores = lagrangian_scores(f, g_n, best_n)
    gaps = scores.max(axis=1, keepdims=True) - scores
    for tie_tol in (*config.tie_tolerances, math.inf):
        if math.isinf(tie_tol):
            logger.warning("Solving the full allocation LP over %d users", matrix.n_users)
        recovered = _restricted_lp(f, g_n, budgets_n, gaps <= tie_tol, config)
        if recovered is None:
            continue
        z, multipliers_n = recovered
        plan = AllocationPlan.from_matrix(matrix, z, multipliers_n / scale)
        primal = plan.expected_objective
        certificate = _dual_value(f, g_n, multipliers_n, budgets_n)
        gap = certificate - primal
        feasible = np.all(plan.expected_spend <= budgets + tolerance)
        if feasible and (gap <= config.certificate_tol * max(1.0, abs(primal)) or math.isinf(tie_tol)):
            solution = _solution(
                matrix,
                plan,
                multipliers_n / scale,
                budgets,
                gap <= config.certificate_tol * max(1.0, abs(primal)),
                iterations,
                mode=mode,
                recovery="lp",
                tie_tolerance=tie_tol if math.isfinite(tie_tol) else None,
                certificate_gap=gap,
                subgradient_lambdas=(best_n / scale).tolist(),
            )
            return solution, plan
        if not feasible:
            logger.warning("Recovered plan overshoots a budget at tie tolerance %g", tie_tol)

    best = best_n / scale
    violation = _spend(matrix.g, choose_levels(f, matrix.g, best)) - budgets
    raise InfeasibleBudgetError(
        f"No allocation satisfies budgets {budgets.tolist()}",
        best_lambda=best.tolist(),
        violation=violation.tolist(),
    )


def solve_per_capita(
    matrix: ResponseMatrix,
    per_capita: Sequence[float] | np.ndarray | float,
    config: DualConfig = DEFAULT_DUAL_CONFIG,
) -> tuple[DualSolution, AllocationPlan]:
    limits = np.atleast_1d(np.asarray(per_capita, dtype=np.float64))
    if limits.shape != (matrix.n_constraints,):
        raise InvalidArgumentError(f"Expected {matrix.n_constraints} per-capita limits, got {limits.tolist()}")
    shifted = matrix.with_costs(matrix.g - limits[:, None, None])
    solution, plan = solve_dual_multi(shifted, np.zeros(matrix.n_constraints), config, mode="per_capita")
    plan = plan.with_costs(matrix.g)
    return (
        DualSolution(
            lambdas=solution.lambdas,
            converged=solution.converged,
            iterations=solution.iterations,
            spend=plan.expected_spend,
            objective=plan.expected_objective,
            dual_value=solution.dual_value,
            budgets=limits,
            grid=matrix.grid,
            cost_names=matrix.cost_names,
            mode="per_capita",
            matrix_checksum=matrix.checksum(),
            diagnostics=solution.diagnostics,
        ),
        plan,
    )


def solve_budget(
    matrix: ResponseMatrix,
    budgets: Sequence[float] | np.ndarray | float,
    per_capita: bool = False,
    config: DualConfig = DEFAULT_DUAL_CONFIG,
) -> tuple[DualSolution, AllocationPlan]:
    """Dispatch to the single, multi or per-capita solver."""
    if per_capita:
        return solve_per_capita(matrix, budgets, config)
    values = np.atleast_1d(np.asarray(budgets, dtype=np.float64))
    if matrix.n_constraints == 1 and values.size == 1:
        return solve_dual_single(matrix, float(values[0]), config)
    return solve_dual_multi(matrix, values, config)


def online_decide(
    dual: DualSolution,
    model: ResponseModelProtocol,
    x: Sequence[int],
    grid: IncentiveGrid | None = None,
    cost_models: Sequence[CostModelProtocol] = (FaceValueCost(),),
    model_checksum: str | None = None,
) -> int:
    """Level for one user under stored multipliers.

    `model_checksum`, when given, must match the checksum recorded in `dual`.
    """
    grid = grid or model.grid
    if grid != model.grid or grid != dual.grid:
        raise StaleDualError(
            f"Grid mismatch: dual {list(dual.grid.levels)}, model {list(model.grid.levels)}, "
            f"requested {list(grid.levels)}"
        )
    if model_checksum is not None and dual.model_checksum is not None and model_checksum != dual.model_checksum:
        raise StaleDualError("The dual solution was computed for a different model; re-run allocate")
    if len(cost_models) != dual.lambdas.size:
        raise StaleDualError(
            f"The dual solution has {dual.lambdas.size} multipliers but {len(cost_models)} cost models were given"
        )
    user = np.asarray([x], dtype=np.int64)
    f = model.predict_curves(user)
    g = cost_layers(user, grid, f, cost_models)
    return int(choose_levels(f, g, dual.lambdas)[0])
