from typing import Protocol, runtime_checkable

import numpy as np

from ..dataset import SampleArrays
from .grid import IncentiveGrid


@runtime_checkable
class ResponseModelProtocol(Protocol):
    kind: str
    grid: IncentiveGrid
    vocab_sizes: tuple[int, int, int]
    params: dict[str, np.ndarray]

    def predict_curves(self, features: np.ndarray) -> np.ndarray: ...

    def predict_levels(self, features: np.ndarray, level_indices: np.ndarray) -> np.ndarray: ...

    def loss_and_grads(self, batch: SampleArrays, alpha: float) -> tuple[float, dict[str, np.ndarray]]: ...
