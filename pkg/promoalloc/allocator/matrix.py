import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError, VocabularyError
from ..model.grid import IncentiveGrid
from ..model.protocol import ResponseModelProtocol
from .costs import CostModelProtocol, FaceValueCost


@dataclass(frozen=True)
class ResponseMatrix:
    """Responses f (N, D) and K cost layers g (K, N, D) for one user batch."""

    grid: IncentiveGrid
    f: np.ndarray
    g: np.ndarray
    users: np.ndarray | None = None
    cost_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.f.ndim != 2 or self.f.shape[1] != self.grid.size:
            raise InvalidArgumentError(f"f must have shape (N, {self.grid.size}), got {self.f.shape}")
        if self.g.ndim != 3 or self.g.shape[1:] != self.f.shape:
            raise InvalidArgumentError(
                f"g must have shape (K, {self.f.shape[0]}, {self.grid.size}), got {self.g.shape}"
            )
        if self.g.shape[0] < 1:
            raise InvalidArgumentError("At least one cost layer is required")
        if self.f.size and (np.min(self.f) < 0.0 or np.max(self.f) > 1.0 or not np.all(np.isfinite(self.f))):
            raise InvalidArgumentError("Response coefficients must lie in [0, 1]")
        if not np.all(np.isfinite(self.g)):
            raise InvalidArgumentError("Cost coefficients must be finite")
        if self.users is not None and self.users.shape != (self.f.shape[0], 3):
            raise InvalidArgumentError(f"users must have shape ({self.f.shape[0]}, 3), got {self.users.shape}")

    @classmethod
    def from_arrays(
        cls,
        f: np.ndarray | Sequence[Sequence[float]],
        g: np.ndarray | Sequence,
        grid: IncentiveGrid | None = None,
        users: np.ndarray | None = None,
    ) -> "ResponseMatrix":
        f = np.asarray(f, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.ndim == 2:
            g = g[None, :, :]
        if grid is None:
            grid = IncentiveGrid.from_levels(range(f.shape[1]))
        return cls(grid=grid, f=f, g=g, users=users, cost_names=tuple(f"cost_{k}" for k in range(g.shape[0])))

    @property
    def n_users(self) -> int:
        return int(self.f.shape[0])

    @property
    def n_levels(self) -> int:
        return int(self.f.shape[1])

    @property
    def n_constraints(self) -> int:
        return int(self.g.shape[0])

    def with_costs(self, g: np.ndarray) -> "ResponseMatrix":
        return ResponseMatrix(grid=self.grid, f=self.f, g=g, users=self.users, cost_names=self.cost_names)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps({"grid": list(self.grid.levels), "costs": list(self.cost_names)}).encode("utf-8"))
        digest.update(np.ascontiguousarray(self.f).tobytes())
        digest.update(np.ascontiguousarray(self.g).tobytes())
        if self.users is not None:
            digest.update(np.ascontiguousarray(self.users, dtype=np.int64).tobytes())
        return digest.hexdigest()


def cost_layers(
    users: np.ndarray,
    grid: IncentiveGrid,
    responses: np.ndarray,
    cost_models: Sequence[CostModelProtocol],
) -> np.ndarray:
    if not cost_models:
        raise InvalidArgumentError("At least one cost model is required")
    return np.stack([np.asarray(model.costs(users, grid, responses), dtype=np.float64) for model in cost_models])


def build_matrix(
    model: ResponseModelProtocol,
    users: np.ndarray | Sequence[Sequence[int]],
    grid: IncentiveGrid | None = None,
    cost_models: Sequence[CostModelProtocol] = (FaceValueCost(),),
) -> ResponseMatrix:
    if grid is not None and grid != model.grid:
        raise InvalidArgumentError(f"Grid {list(grid.levels)} differs from the model grid {list(model.grid.levels)}")
    grid = model.grid
    rows = np.asarray(users, dtype=np.int64).reshape(-1, 3)
    if rows.shape[0] == 0:
        f = np.zeros((0, grid.size))
    else:
        try:
            f = model.predict_curves(rows)
        except VocabularyError as e:
            raise VocabularyError(f"Cannot score user batch: {e}", feature_index=e.feature_index, value=e.value) from e
    g = cost_layers(rows, grid, f, cost_models)
    return ResponseMatrix(
        grid=grid,
        f=f,
        g=g,
        users=rows,
        cost_names=tuple(cost.name for cost in cost_models),
    )
