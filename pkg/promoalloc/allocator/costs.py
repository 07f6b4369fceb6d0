from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import InvalidArgumentError
from ..model.grid import IncentiveGrid


@runtime_checkable
class CostModelProtocol(Protocol):
    @property
    def name(self) -> str: ...

    def costs(self, users: np.ndarray, grid: IncentiveGrid, responses: np.ndarray) -> np.ndarray:
        """Cost of offering each grid level to each user, shape (N, D)."""
        ...


@dataclass(frozen=True)
class FaceValueCost:
    @property
    def name(self) -> str:
        return "face_value"

    def costs(self, users: np.ndarray, grid: IncentiveGrid, responses: np.ndarray) -> np.ndarray:
        return np.tile(grid.as_array(), (len(users), 1))


@dataclass(frozen=True)
class SubgroupFaceValueCost:
    """Face value for users whose `feature` equals `category`, zero for everyone else."""

    feature: int
    category: int

    def __post_init__(self):
        if self.feature not in (0, 1, 2):
            raise InvalidArgumentError(f"Subgroup feature must be 0, 1 or 2, got {self.feature}")

    @property
    def name(self) -> str:
        return f"subgroup:{self.feature}={self.category}"

    def costs(self, users: np.ndarray, grid: IncentiveGrid, responses: np.ndarray) -> np.ndarray:
        member = (np.asarray(users).reshape(-1, 3)[:, self.feature] == self.category).astype(np.float64)
        return member[:, None] * grid.as_array()[None, :]


@dataclass(frozen=True)
class ResponseWeightedCost:
    """Incentive paid only on response: d_j * f(x, d_j)."""

    @property
    def name(self) -> str:
        return "response_weighted"

    def costs(self, users: np.ndarray, grid: IncentiveGrid, responses: np.ndarray) -> np.ndarray:
        return grid.as_array()[None, :] * responses


def parse_cost_model(spec: str) -> CostModelProtocol:
    spec = spec.strip()
    if spec == "face_value":
        return FaceValueCost()
    if spec == "response_weighted":
        return ResponseWeightedCost()
    if spec.startswith("subgroup:"):
        try:
            feature, category = spec.removeprefix("subgroup:").split("=")
            return SubgroupFaceValueCost(feature=int(feature), category=int(category))
        except ValueError as e:
            raise InvalidArgumentError(
                f"Malformed subgroup cost {spec!r}; expected subgroup:<feature>=<category>"
            ) from e
    raise InvalidArgumentError(
        f"Unknown cost model {spec!r}; expected face_value, response_weighted or subgroup:<feature>=<category>"
    )
