import math
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import InvalidArgumentError
from ..model.grid import IncentiveGrid
from ..records import read_json, read_jsonl, write_json, write_jsonl
from .matrix import ResponseMatrix

PLAN_KIND = "plan"
DUAL_KIND = "dual_solution"
PROBABILITY_TOL = 1e-9


@dataclass(frozen=True)
class DualSolution:
    lambdas: np.ndarray
    converged: bool
    iterations: int
    spend: np.ndarray
    objective: float
    dual_value: float
    budgets: np.ndarray
    grid: IncentiveGrid
    cost_names: tuple[str, ...] = ()
    mode: str = "total"
    matrix_checksum: str | None = None
    model_checksum: str | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.lambdas < 0):
            raise InvalidArgumentError(f"Dual variables must be >= 0, got {self.lambdas.tolist()}")


@dataclass(frozen=True)
class AllocationPlan:
    """Per-user distribution z over grid levels plus the coefficients it was built from.

    Rows of `z` sum to one; a row with a single nonzero entry is a
    deterministic assignment, anything else is a boundary user.
    """

    grid: IncentiveGrid
    z: np.ndarray
    lambdas: np.ndarray
    f: np.ndarray
    g: np.ndarray
    users: np.ndarray | None = None

    def __post_init__(self):
        if self.z.shape != self.f.shape or self.g.shape[1:] != self.z.shape:
            raise InvalidArgumentError(f"Plan shapes disagree: z {self.z.shape}, f {self.f.shape}, g {self.g.shape}")
        if self.z.size and (np.min(self.z) < 0 or np.max(np.abs(self.z.sum(axis=1) - 1.0)) > PROBABILITY_TOL):
            raise InvalidArgumentError("Every plan row must be a probability distribution")

    @classmethod
    def from_matrix(cls, matrix: ResponseMatrix, z: np.ndarray, lambdas: np.ndarray) -> "AllocationPlan":
        return cls(
            grid=matrix.grid,
            z=z,
            lambdas=np.asarray(lambdas, dtype=np.float64),
            f=matrix.f,
            g=matrix.g,
            users=matrix.users,
        )

    @property
    def n_users(self) -> int:
        return int(self.z.shape[0])

    @property
    def support(self) -> np.ndarray:
        return self.z > 0

    @property
    def boundary_users(self) -> np.ndarray:
        return np.flatnonzero(self.support.sum(axis=1) > 1)

    @property
    def is_deterministic(self) -> bool:
        return self.boundary_users.size == 0

    @property
    def levels(self) -> np.ndarray:
        """Most probable level per user, lowest index on ties."""
        return np.argmax(self.z, axis=1)

    def user_costs(self) -> np.ndarray:
        """Expected cost per user and constraint, shape (N, K)."""
        return np.einsum("knd,nd->nk", np.where(self.support[None, :, :], self.g, 0.0), self.z)

    @property
    def expected_spend(self) -> np.ndarray:
        return np.asarray([math.fsum(column) for column in self.user_costs().T])

    @property
    def expected_objective(self) -> float:
        return math.fsum((np.where(self.support, self.f, 0.0) * self.z).ravel())

    def with_costs(self, g: np.ndarray) -> "AllocationPlan":
        return AllocationPlan(grid=self.grid, z=self.z, lambdas=self.lambdas, f=self.f, g=g, users=self.users)


@dataclass(frozen=True)
class SampledPlan:
    levels: np.ndarray
    realized_spend: np.ndarray
    expected_spend: np.ndarray
    realized_objective: float
    expected_objective: float


def one_hot_plan(matrix: ResponseMatrix, choice: np.ndarray, lambdas: np.ndarray) -> AllocationPlan:
    z = np.zeros_like(matrix.f)
    z[np.arange(matrix.n_users), choice] = 1.0
    return AllocationPlan.from_matrix(matrix, z, lambdas)


def sample_plan(plan: AllocationPlan, seed: int | None = None) -> SampledPlan:
    rng = np.random.default_rng(seed)
    n = plan.n_users
    cumulative = np.cumsum(plan.z, axis=1)
    if n:
        cumulative /= cumulative[:, -1:]
    u = rng.random(n)
    levels = np.argmax(cumulative > u[:, None], axis=1) if n else np.zeros(0, dtype=np.int64)
    rows = np.arange(n)
    return SampledPlan(
        levels=levels,
        realized_spend=np.asarray([math.fsum(plan.g[k, rows, levels]) for k in range(plan.g.shape[0])]),
        expected_spend=plan.expected_spend,
        realized_objective=math.fsum(plan.f[rows, levels]),
        expected_objective=plan.expected_objective,
    )


def _plan_record(plan: AllocationPlan, i: int, costs: np.ndarray) -> dict[str, Any]:
    levels = np.flatnonzero(plan.support[i])
    record: dict[str, Any] = {"user": i}
    if plan.users is not None:
        record["features"] = [int(v) for v in plan.users[i]]
    if levels.size == 1:
        record["level"] = int(levels[0])
    else:
        record["levels"] = [int(j) for j in levels]
        record["probabilities"] = [float(plan.z[i, j]) for j in levels]
    record["incentives"] = [plan.grid.levels[j] for j in levels]
    record["responses"] = [float(plan.f[i, j]) for j in levels]
    record["costs"] = [[float(plan.g[k, i, j]) for k in range(plan.g.shape[0])] for j in levels]
    record["expected_cost"] = [float(c) for c in costs[i]]
    return record


def write_plan(path: PathLike, plan: AllocationPlan, dual: DualSolution | None = None) -> Path:
    costs = plan.user_costs()
    header = {
        "grid": list(plan.grid.levels),
        "constraints": int(plan.g.shape[0]),
        "lambdas": [float(v) for v in plan.lambdas],
        "expected_spend": [float(v) for v in plan.expected_spend],
        "expected_objective": plan.expected_objective,
        "matrix_checksum": dual.matrix_checksum if dual is not None else None,
    }
    return write_jsonl(path, PLAN_KIND, (_plan_record(plan, i, costs) for i in range(plan.n_users)), header=header)


def read_plan(path: PathLike) -> AllocationPlan:
    """Rebuild a plan from its records; coefficients outside each user's support are NaN."""
    header, records = read_jsonl(path, PLAN_KIND)
    grid = IncentiveGrid.from_levels(header["grid"])
    k = int(header["constraints"])
    n = len(records)
    z = np.zeros((n, grid.size))
    f = np.full((n, grid.size), np.nan)
    g = np.full((k, n, grid.size), np.nan)
    users = np.zeros((n, 3), dtype=np.int64) if n and "features" in records[0] else None
    for record in records:
        i = int(record["user"])
        if "level" in record:
            levels, probabilities = [int(record["level"])], [1.0]
        else:
            levels, probabilities = record["levels"], record["probabilities"]
        for j, p, response, level_costs in zip(levels, probabilities, record["responses"], record["costs"]):
            z[i, j] = p
            f[i, j] = response
            g[:, i, j] = level_costs
        if users is not None:
            users[i] = record["features"]
    lambdas = np.asarray(header["lambdas"], dtype=np.float64)
    return AllocationPlan(grid=grid, z=z, lambdas=lambdas, f=f, g=g, users=users)


def save_dual(path: PathLike, dual: DualSolution) -> Path:
    return write_json(
        path,
        DUAL_KIND,
        {
            "lambdas": [float(v) for v in dual.lambdas],
            "converged": dual.converged,
            "iterations": dual.iterations,
            "spend": [float(v) for v in dual.spend],
            "objective": dual.objective,
            "dual_value": dual.dual_value,
            "budgets": [float(v) for v in dual.budgets],
            "mode": dual.mode,
            "grid": list(dual.grid.levels),
            "cost_names": list(dual.cost_names),
            "matrix_checksum": dual.matrix_checksum,
            "model_checksum": dual.model_checksum,
            "diagnostics": dual.diagnostics,
        },
    )


def load_dual(path: PathLike) -> DualSolution:
    document = read_json(path, DUAL_KIND)
    return DualSolution(
        lambdas=np.asarray(document["lambdas"], dtype=np.float64),
        converged=bool(document["converged"]),
        iterations=int(document["iterations"]),
        spend=np.asarray(document["spend"], dtype=np.float64),
        objective=float(document["objective"]),
        dual_value=float(document["dual_value"]),
        budgets=np.asarray(document["budgets"], dtype=np.float64),
        grid=IncentiveGrid.from_levels(document["grid"]),
        cost_names=tuple(document.get("cost_names", ())),
        mode=document.get("mode", "total"),
        matrix_checksum=document.get("matrix_checksum"),
        model_checksum=document.get("model_checksum"),
        diagnostics=document.get("diagnostics", {}),
    )
