from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError, VocabularyError
from .grid import IncentiveGrid

FEATURE_COUNT = 3


class EmbeddingModel:
    """Shared plumbing for models that sum one embedding per categorical feature."""

    kind = "base"

    def __init__(self, grid: IncentiveGrid, vocab_sizes: Sequence[int], params: dict[str, np.ndarray]):
        if len(vocab_sizes) != FEATURE_COUNT:
            raise InvalidArgumentError(f"Expected {FEATURE_COUNT} vocabulary sizes, got {list(vocab_sizes)}")
        if any(size < 1 for size in vocab_sizes):
            raise InvalidArgumentError(f"Vocabulary sizes must be >= 1, got {list(vocab_sizes)}")
        self.grid = grid
        self.vocab_sizes: tuple[int, int, int] = (int(vocab_sizes[0]), int(vocab_sizes[1]), int(vocab_sizes[2]))
        self.params = params

    def copy(self):
        return type(self)(self.grid, self.vocab_sizes, {name: value.copy() for name, value in self.params.items()})

    def check_vocabulary(self, features: np.ndarray | Sequence[int]) -> np.ndarray:
        rows = np.asarray(features, dtype=np.int64)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.ndim != 2 or rows.shape[1] != FEATURE_COUNT:
            raise InvalidArgumentError(f"features must have shape (N, {FEATURE_COUNT}), got {rows.shape}")
        for f, size in enumerate(self.vocab_sizes):
            column = rows[:, f]
            bad = np.flatnonzero((column < 0) | (column >= size))
            if bad.size:
                row = int(bad[0])
                raise VocabularyError(
                    f"Feature {f} value {int(column[row])} at row {row} is outside the vocabulary of size {size}",
                    feature_index=f,
                    value=int(column[row]),
                )
        return rows

    def _embed(self, prefix: str, features: np.ndarray) -> np.ndarray:
        return sum(self.params[f"{prefix}_{f}"][features[:, f]] for f in range(FEATURE_COUNT))

    def _embed_grads(self, prefix: str, features: np.ndarray, dh: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        for f in range(FEATURE_COUNT):
            name = f"{prefix}_{f}"
            grad = np.zeros_like(self.params[name])
            np.add.at(grad, features[:, f], dh)
            grads[name] = grad

    def predict_curves(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_levels(self, features: np.ndarray, level_indices: np.ndarray) -> np.ndarray:
        curves = self.predict_curves(features)
        idx = np.asarray(level_indices, dtype=np.int64)
        return curves[np.arange(curves.shape[0]), idx]

    def predict_samples(self, features: np.ndarray, incentives: np.ndarray) -> np.ndarray:
        return self.predict_levels(features, self.grid.level_indices(incentives))

    def predict_curve(self, x: Sequence[int]) -> np.ndarray:
        return self.predict_curves(np.asarray([x], dtype=np.int64))[0]

    def predict(self, x: Sequence[int], c: float) -> float:
        return float(self.predict_curve(x)[self.grid.level_index(c)])
