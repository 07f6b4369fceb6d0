import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InfeasibleBudgetError, InvalidArgumentError
from .matrix import ResponseMatrix

ENUMERATION_BOUND = 40
COMBINATION_CAP = 5_000_000
VERTEX_CAP = 500_000
_CHUNK = 1 << 16
_SINGULAR_TOL = 1e-12
_TIE_TOL = 1e-9
_FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ExactSolution:
    lp_objective: float
    lp_z: np.ndarray
    ilp_objective: float | None
    ilp_levels: np.ndarray | None


def _user_hull(costs: np.ndarray, values: np.ndarray) -> list[int]:
    """Upper concave hull of (cost, value) from the cheapest best point, rising in both."""
    order = np.lexsort((-values, costs))
    hull = [int(order[0])]
    for j in order[1:]:
        j = int(j)
        last = hull[-1]
        if costs[j] == costs[last] or values[j] <= values[last]:
            continue
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            left = (values[b] - values[a]) / (costs[b] - costs[a])
            right = (values[j] - values[b]) / (costs[j] - costs[b])
            if left > right:
                break
            hull.pop()
        hull.append(j)
    return hull


def _lp_single(f: np.ndarray, g: np.ndarray, budget: float) -> np.ndarray:
    n, _ = f.shape
    hulls = [_user_hull(g[i], f[i]) for i in range(n)]
    base = math.fsum(g[i, hull[0]] for i, hull in enumerate(hulls))
    if budget < base - 1e-9 * max(1.0, abs(budget)):
        raise InfeasibleBudgetError(f"Budget {budget:g} is below the minimum spend {base:g}", minimum_spend=base)

    segments = []
    for i, hull in enumerate(hulls):
        for t in range(len(hull) - 1):
            a, b = hull[t], hull[t + 1]
            cost = g[i, b] - g[i, a]
            segments.append(((f[i, b] - f[i, a]) / cost, i, t, cost))
    segments.sort(key=lambda s: (-s[0], s[1], s[2]))

    position = [0] * n
    fraction = [0.0] * n
    remaining = budget - base
    for _, i, t, cost in segments:
        if remaining <= 0:
            break
        if cost <= remaining:
            position[i] = t + 1
            remaining -= cost
        else:
            fraction[i] = remaining / cost
            remaining = 0.0

    z = np.zeros_like(f)
    for i, hull in enumerate(hulls):
        here = hull[position[i]]
        if fraction[i] > 0:
            z[i, here] = 1.0 - fraction[i]
            z[i, hull[position[i] + 1]] = fraction[i]
        else:
            z[i, here] = 1.0
    return z


def _regular_solutions(systems: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve every nonsingular square system in a stack; returns the solutions and the kept mask."""
    regular = np.abs(np.linalg.det(systems)) > _SINGULAR_TOL
    solutions = np.linalg.solve(systems[regular], rhs[regular][..., None])[..., 0]
    return solutions, regular


def _combinations(count: int, size: int, what: str) -> np.ndarray:
    total = math.comb(count, size)
    if total > VERTEX_CAP:
        raise InvalidArgumentError(f"{total} {what} exceed the enumeration cap {VERTEX_CAP}")
    return np.asarray(list(itertools.combinations(range(count), size)), dtype=np.int64).reshape(-1, size)


def _dual_minimizer(f: np.ndarray, g: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Multipliers minimizing the dual, found among the vertices of its linear pieces.

    The dual is piecewise linear on lambda >= 0 with breaks on the planes where
    two levels of one user tie, so its minimum sits where K independent planes
    among those and the axes meet.
    """
    k = g.shape[0]
    first, second = np.triu_indices(f.shape[1], k=1)
    normals = np.concatenate([np.eye(k), (g[:, :, first] - g[:, :, second]).reshape(k, -1).T])
    offsets = np.concatenate([np.zeros(k), (f[:, first] - f[:, second]).ravel()])
    keep = np.any(np.abs(normals) > 0.0, axis=1)
    normals, offsets = normals[keep], offsets[keep]

    combos = _combinations(len(normals), k, "dual vertices")
    points, _ = _regular_solutions(normals[combos], offsets[combos])
    points = np.maximum(points[np.all(points >= -_SINGULAR_TOL, axis=1)], 0.0)
    scores = f[None, :, :] - np.einsum("vk,knd->vnd", points, g)
    values = scores.max(axis=2).sum(axis=1) + points @ budgets
    return points[int(np.argmin(values))]


def _lp_general(f: np.ndarray, g: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Fractional optimum over the users tied at the dual minimizer, by basis enumeration.

    Users with a single best level at the minimizer keep it. The tied users
    share what is left of each budget through weights on their tied levels
    plus one slack per budget; every basic solution of that system is tried.
    """
    k = g.shape[0]
    lambdas = _dual_minimizer(f, g, budgets)
    scores = f - np.tensordot(lambdas, g, axes=1)
    candidates = scores >= scores.max(axis=1, keepdims=True) - _TIE_TOL
    counts = candidates.sum(axis=1)

    z = np.zeros_like(f)
    fixed = np.flatnonzero(counts == 1)
    z[fixed, np.argmax(candidates[fixed], axis=1)] = 1.0
    remaining = budgets - np.einsum("knd,nd->k", g, z)

    tied = np.flatnonzero(counts > 1)
    owners, levels = np.nonzero(candidates[tied])
    users = tied[owners]
    width, rows = users.size + k, tied.size + k
    system = np.zeros((rows, width))
    system[owners, np.arange(users.size)] = 1.0
    system[tied.size :, : users.size] = g[:, users, levels]
    system[tied.size :, users.size :] = np.eye(k)
    rhs = np.concatenate([np.ones(tied.size), remaining])
    gains = np.concatenate([f[users, levels], np.zeros(k)])

    bases = _combinations(width, rows, "bases")
    solutions, regular = _regular_solutions(np.transpose(system[:, bases], (1, 0, 2)), np.tile(rhs, (len(bases), 1)))
    bases = bases[regular]
    feasible = np.all(solutions >= -_FEASIBILITY_TOL, axis=1)
    if not np.any(feasible):
        raise InfeasibleBudgetError(f"No fractional allocation satisfies budgets {budgets.tolist()}")
    solutions, bases = solutions[feasible], bases[feasible]
    best = int(np.argmax(np.sum(gains[bases] * solutions, axis=1)))

    weights = np.zeros(width)
    weights[bases[best]] = np.clip(solutions[best], 0.0, None)
    z[users, levels] = weights[: users.size]
    if tied.size:
        z[tied] /= z[tied].sum(axis=1, keepdims=True)
    return z


def _enumerate(f: np.ndarray, g: np.ndarray, budgets: np.ndarray) -> tuple[float | None, np.ndarray | None]:
    n, d = f.shape
    total = d**n
    if total > COMBINATION_CAP:
        raise InvalidArgumentError(f"{total} assignments exceed the enumeration cap {COMBINATION_CAP}")
    tolerance = 1e-9 * np.maximum(1.0, np.abs(budgets))
    radix = d ** np.arange(n)
    rows = np.arange(n)
    best_value: float | None = None
    best_levels: np.ndarray | None = None
    for start in range(0, total, _CHUNK):
        index = np.arange(start, min(start + _CHUNK, total))
        digits = (index[:, None] // radix[None, :]) % d
        spend = g[:, rows[None, :], digits].sum(axis=2)
        feasible = np.all(spend <= (budgets + tolerance)[:, None], axis=0)
        if not np.any(feasible):
            continue
        values = f[rows[None, :], digits].sum(axis=1)
        values[~feasible] = -np.inf
        pick = int(np.argmax(values))
        if best_value is None or values[pick] > best_value:
            best_value, best_levels = float(values[pick]), digits[pick].copy()
    return best_value, best_levels


def solve_exact_small(matrix: ResponseMatrix, budgets: Sequence[float] | np.ndarray | float) -> ExactSolution:
    """Exact LP and integer optima for tiny instances.

    One budget uses a concave-hull greedy; several use dual-vertex and basis
    enumeration. The integer optimum enumerates every assignment.
    """
    if matrix.n_users * matrix.n_levels > ENUMERATION_BOUND:
        raise InvalidArgumentError(
            f"Instance has N*D = {matrix.n_users * matrix.n_levels}, above the oracle bound {ENUMERATION_BOUND}"
        )
    values = np.atleast_1d(np.asarray(budgets, dtype=np.float64))
    if values.shape != (matrix.n_constraints,):
        raise InvalidArgumentError(f"Expected {matrix.n_constraints} budgets, got {values.tolist()}")
    f, g = matrix.f, matrix.g
    if matrix.n_users == 0:
        return ExactSolution(0.0, np.zeros_like(f), 0.0, np.zeros(0, dtype=np.int64))

    z = _lp_single(f, g[0], float(values[0])) if matrix.n_constraints == 1 else _lp_general(f, g, values)
    ilp_value, ilp_levels = _enumerate(f, g, values)
    return ExactSolution(
        lp_objective=math.fsum((f * z).ravel()),
        lp_z=z,
        ilp_objective=ilp_value,
        ilp_levels=ilp_levels,
    )
