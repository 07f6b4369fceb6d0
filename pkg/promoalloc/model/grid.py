from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class IncentiveGrid:
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) < 2:
            raise InvalidArgumentError(f"An incentive grid needs at least 2 levels, got {len(self.levels)}")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise InvalidArgumentError(f"Grid levels must be strictly increasing, got {list(self.levels)}")

    @classmethod
    def from_levels(cls, levels: Sequence[float]) -> "IncentiveGrid":
        return cls(levels=tuple(float(level) for level in levels))

    @classmethod
    def from_stride(cls, stride: int, upper: int = 100, lower: int = 0) -> "IncentiveGrid":
        if stride < 1:
            raise InvalidArgumentError(f"Grid stride must be at least 1, got {stride}")
        levels = list(range(lower, upper + 1, stride))
        if levels[-1] != upper:
            levels.append(upper)
        return cls.from_levels(levels)

    @property
    def size(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.float64)

    def level_indices(self, incentives: np.ndarray | Sequence[float]) -> np.ndarray:
        """Grid index of each incentive, rounding off-grid values down."""
        values = np.asarray(incentives, dtype=np.float64)
        levels = self.as_array()
        if values.size and np.min(values) < levels[0]:
            raise InvalidArgumentError(
                f"Incentive {float(np.min(values))} is below the lowest grid level {levels[0]}"
            )
        return np.searchsorted(levels, values, side="right") - 1

    def level_index(self, incentive: float) -> int:
        return int(self.level_indices(np.asarray([incentive]))[0])


def isotonic_embed(grid: IncentiveGrid, c: float) -> np.ndarray:
    """bits[j] = 1 iff c >= d_j; always a prefix of ones followed by zeros."""
    if c < grid.levels[0]:
        raise InvalidArgumentError(f"Incentive {c} is below the lowest grid level {grid.levels[0]}")
    return (c >= grid.as_array()).astype(np.int8)
