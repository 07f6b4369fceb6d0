import os
import unittest

import numpy as np

from promoalloc.allocator import ResponseMatrix
from promoalloc.dataset import SampleArrays, TrainingSample
from promoalloc.model import DipnModel, IncentiveGrid, MlpModel

SLOW_TESTS = bool(os.environ.get("PROMOALLOC_SLOW_TESTS"))

slow_test = unittest.skipUnless(SLOW_TESTS, "set PROMOALLOC_SLOW_TESTS=1 to run long statistical checks")


def small_grid(size: int = 3) -> IncentiveGrid:
    return IncentiveGrid.from_levels([10.0 * j for j in range(size)])


def random_batch(rng: np.random.Generator, grid: IncentiveGrid, vocab_sizes, count: int = 8) -> SampleArrays:
    features = np.stack([rng.integers(0, size, size=count) for size in vocab_sizes], axis=1)
    incentives = rng.choice(grid.as_array(), size=count)
    return SampleArrays(
        features=features.astype(np.int64),
        incentives=incentives.astype(np.float64),
        labels=rng.integers(0, 2, size=count).astype(np.float64),
        weights=rng.uniform(0.5, 2.0, size=count),
    )


def random_samples(rng: np.random.Generator, grid: IncentiveGrid, vocab_sizes, count: int) -> list[TrainingSample]:
    batch = random_batch(rng, grid, vocab_sizes, count)
    return [
        TrainingSample(features=tuple(int(v) for v in row), incentive=int(c), label=int(y))
        for row, c, y in zip(batch.features, batch.incentives, batch.labels)
    ]


def tiny_dipn(seed: int, grid: IncentiveGrid | None = None, vocab_sizes=(3, 2, 2), embed_dim: int = 2) -> DipnModel:
    """Randomized DIPN whose ReLU pre-activations stay clear of zero."""
    grid = grid or small_grid()
    rng = np.random.default_rng(seed + 10_000)
    model = DipnModel.initialize(grid, vocab_sizes, embed_dim=embed_dim, seed=seed)
    params = model.params
    hidden = params["bias_hidden_b"].shape[0]
    params["bias_hidden_b"][:] = rng.choice([-1.0, 1.0], size=hidden) * rng.uniform(0.5, 0.8, size=hidden)
    params["global_bias"][:] = rng.normal(0.0, 0.5, size=1)
    count = params["uplift_b"].shape[0]
    params["uplift_b"][:] = rng.uniform(0.3, 0.6, size=count)
    params["uplift_bias_w"][:] = rng.normal(0.0, 0.1, size=count)
    params["uplift_prev_w"][:] = rng.uniform(0.0, 0.3, size=count)
    return model


def tiny_mlp(seed: int, grid: IncentiveGrid | None = None, vocab_sizes=(3, 2, 2), embed_dim: int = 2) -> MlpModel:
    grid = grid or small_grid()
    rng = np.random.default_rng(seed + 20_000)
    model = MlpModel.initialize(grid, vocab_sizes, embed_dim=embed_dim, hidden=(3, 3), seed=seed)
    for layer in range(model.layer_count):
        bias = model.params[f"hidden_{layer}_b"]
        bias[:] = rng.choice([-1.0, 1.0], size=bias.shape[0]) * rng.uniform(0.5, 0.8, size=bias.shape[0])
    return model


def random_matrix(rng: np.random.Generator, n: int, d: int, k: int = 1) -> ResponseMatrix:
    """Monotone responses with face-value costs; extra layers get random nonnegative costs."""
    f = np.sort(rng.uniform(0.0, 1.0, size=(n, d)), axis=1)
    levels = np.arange(d, dtype=np.float64)
    layers = [np.tile(levels, (n, 1))]
    for _ in range(k - 1):
        layers.append(rng.uniform(0.0, 3.0, size=(n, d)))
    return ResponseMatrix.from_arrays(f, np.stack(layers))


def numeric_gradient(loss_fn, params: dict[str, np.ndarray], name: str, h: float = 1e-5) -> np.ndarray:
    value = params[name]
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        original = value[index]
        value[index] = original + h
        plus = loss_fn()
        value[index] = original - h
        minus = loss_fn()
        value[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
