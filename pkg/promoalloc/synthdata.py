import itertools
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Features, TrainingSample
from .errors import InvalidArgumentError
from .records import read_json, write_json

POPULATION_KIND = "population"

INCENTIVE_MAX = 100
CURVE_POINTS = INCENTIVE_MAX + 1
MU_RANGE = (-50.0, 150.0)
DELTA_MIN = 1e-3
DELTA_MAX = 50.0
SAMPLES_PER_CATEGORY_MAX = 1000
RESPONSE_CAP = 1.0 - 1e-9


@dataclass(frozen=True)
class CurveParams:
    a: float
    b: float
    mu: float
    delta: float

    def __post_init__(self):
        # gen_population draws a strictly inside (0, 1); closed ends are kept
        # for hand-built degenerate fixtures.
        if not 0.0 <= self.a <= 1.0:
            raise InvalidArgumentError(f"baseline a must be in [0, 1], got {self.a}")
        if self.b != 1.0 - self.a:
            raise InvalidArgumentError(f"uplift mass b must equal 1 - a, got a={self.a}, b={self.b}")
        if self.delta <= 0:
            raise InvalidArgumentError(f"delta must be > 0, got {self.delta}")

    @classmethod
    def from_baseline(cls, a: float, mu: float, delta: float) -> "CurveParams":
        return cls(a=a, b=1.0 - a, mu=mu, delta=delta)


@dataclass(frozen=True)
class GroundTruthCurve:
    params: CurveParams
    y: np.ndarray

    def response(self, incentive: int) -> float:
        if not 0 <= incentive <= INCENTIVE_MAX:
            raise InvalidArgumentError(f"incentive must be in 0..{INCENTIVE_MAX}, got {incentive}")
        return float(self.y[incentive])


def build_curve(params: CurveParams) -> GroundTruthCurve:
    h = np.arange(CURVE_POINTS, dtype=np.float64)
    # Gaussian over its maximum on 0..100, in log space to avoid underflow.
    exponent = (h - params.mu) ** 2 / (2.0 * params.delta**2)
    normalized = np.exp(-(exponent - np.min(exponent)))
    # Summation starts at h = 1 so that y[0] is exactly the baseline a.
    increments = np.concatenate(([0.0], normalized[1:]))
    y = params.a + params.b / INCENTIVE_MAX * np.cumsum(increments)
    y = np.minimum(y, RESPONSE_CAP)
    y.setflags(write=False)
    return GroundTruthCurve(params=params, y=y)


@dataclass(frozen=True)
class SyntheticPopulation:
    n1: int
    n2: int
    n3: int
    seed: int | None
    curves: dict[Features, GroundTruthCurve]

    @property
    def vocab_sizes(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def categories(self) -> list[Features]:
        return list(itertools.product(range(self.n1), range(self.n2), range(self.n3)))

    def curve(self, features: Sequence[int]) -> GroundTruthCurve:
        key = (int(features[0]), int(features[1]), int(features[2]))
        curve = self.curves.get(key)
        if curve is None:
            raise InvalidArgumentError(f"Unknown joint category {key} for population {self.vocab_sizes}")
        return curve

    def curve_matrix(self, users: np.ndarray) -> np.ndarray:
        """Ground-truth curves stacked per user row, shape (N, 101)."""
        users = np.asarray(users, dtype=np.int64).reshape(-1, 3)
        return np.stack([self.curve(row).y for row in users]) if len(users) else np.zeros((0, CURVE_POINTS))


@dataclass(frozen=True)
class BiasedDataset:
    samples: list[TrainingSample]
    # Assignment probabilities over incentives 1..100, keyed by joint category.
    propensities: dict[Features, np.ndarray]

    @property
    def levels(self) -> np.ndarray:
        return np.arange(1, INCENTIVE_MAX + 1)


def gen_population(n1: int, n2: int, n3: int, seed: int | None = None) -> SyntheticPopulation:
    for name, value in (("n1", n1), ("n2", n2), ("n3", n3)):
        if value < 1:
            raise InvalidArgumentError(f"{name} must be at least 1, got {value}")

    rng = np.random.default_rng(seed)
    count = n1 * n2 * n3
    a = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=count)
    mu = rng.uniform(MU_RANGE[0], MU_RANGE[1], size=count)
    delta = rng.uniform(DELTA_MIN, DELTA_MAX, size=count)

    curves: dict[Features, GroundTruthCurve] = {}
    for index, key in enumerate(itertools.product(range(n1), range(n2), range(n3))):
        params = CurveParams.from_baseline(a=float(a[index]), mu=float(mu[index]), delta=float(delta[index]))
        curves[key] = build_curve(params)
    return SyntheticPopulation(n1=n1, n2=n2, n3=n3, seed=seed, curves=curves)


def population_from_params(
    vocab_sizes: tuple[int, int, int],
    params: dict[Features, CurveParams],
    seed: int | None = None,
) -> SyntheticPopulation:
    n1, n2, n3 = vocab_sizes
    expected = set(itertools.product(range(n1), range(n2), range(n3)))
    if set(params) != expected:
        raise InvalidArgumentError(f"Population needs exactly {len(expected)} categories, got {len(params)}")
    curves = {key: build_curve(value) for key, value in params.items()}
    return SyntheticPopulation(n1=n1, n2=n2, n3=n3, seed=seed, curves=curves)


def _category_counts(rng: np.random.Generator, category_count: int, n_samples: int | None) -> np.ndarray:
    z = rng.integers(1, SAMPLES_PER_CATEGORY_MAX + 1, size=category_count)
    if n_samples is None:
        return z
    if n_samples < 0:
        raise InvalidArgumentError(f"n_samples must be >= 0, got {n_samples}")
    return rng.multinomial(n_samples, z / z.sum())


def draw_dataset(
    pop: SyntheticPopulation,
    seed: int | None = None,
    n_samples: int | None = None,
) -> list[TrainingSample]:
    rng = np.random.default_rng(seed)
    categories = pop.categories
    counts = _category_counts(rng, len(categories), n_samples)

    samples: list[TrainingSample] = []
    for key, count in zip(categories, counts):
        curve = pop.curves[key]
        incentives = rng.integers(1, INCENTIVE_MAX + 1, size=int(count))
        labels = rng.random(int(count)) < curve.y[incentives]
        samples.extend(
            TrainingSample(features=key, incentive=int(p), label=int(label))
            for p, label in zip(incentives, labels)
        )
    return samples


def assignment_propensities(a: float, bias_strength: float) -> np.ndarray:
    """Softmax over incentives 1..100 tilted toward low incentives for high-baseline users."""
    levels = np.arange(1, INCENTIVE_MAX + 1, dtype=np.float64)
    centered = (levels - 50.5) / 49.5
    logits = -bias_strength * (a - 0.5) * centered
    logits -= np.max(logits)
    weights = np.exp(logits)
    return weights / weights.sum()


def draw_biased_dataset(
    pop: SyntheticPopulation,
    bias_strength: float,
    seed: int | None = None,
    n_samples: int | None = None,
) -> BiasedDataset:
    if bias_strength < 0:
        raise InvalidArgumentError(f"bias_strength must be >= 0, got {bias_strength}")

    rng = np.random.default_rng(seed)
    categories = pop.categories
    counts = _category_counts(rng, len(categories), n_samples)

    samples: list[TrainingSample] = []
    propensities: dict[Features, np.ndarray] = {}
    for key, count in zip(categories, counts):
        curve = pop.curves[key]
        propensity = assignment_propensities(curve.params.a, bias_strength)
        propensity.setflags(write=False)
        propensities[key] = propensity

        incentives = rng.choice(INCENTIVE_MAX, size=int(count), p=propensity) + 1
        labels = rng.random(int(count)) < curve.y[incentives]
        samples.extend(
            TrainingSample(
                features=key,
                incentive=int(p),
                label=int(label),
                propensity=float(propensity[p - 1]),
            )
            for p, label in zip(incentives, labels)
        )
    return BiasedDataset(samples=samples, propensities=propensities)


def split_dataset(
    samples: Sequence[TrainingSample],
    sizes: Sequence[int],
    seed: int | None = None,
) -> tuple[list[TrainingSample], ...]:
    if any(size < 0 for size in sizes):
        raise InvalidArgumentError(f"split sizes must be >= 0, got {list(sizes)}")
    total = sum(sizes)
    if total > len(samples):
        raise InvalidArgumentError(f"Requested {total} samples across splits but only {len(samples)} exist")

    order = np.random.default_rng(seed).permutation(len(samples))
    splits: list[list[TrainingSample]] = []
    start = 0
    for size in sizes:
        splits.append([samples[int(i)] for i in order[start : start + size]])
        start += size
    return tuple(splits)


def sample_users(pop: SyntheticPopulation, count: int, seed: int | None = None) -> np.ndarray:
    """Draw an i.i.d. user cohort with the generator's category mix."""
    if count < 0:
        raise InvalidArgumentError(f"count must be >= 0, got {count}")
    rng = np.random.default_rng(seed)
    categories = np.asarray(pop.categories, dtype=np.int64)
    weights = rng.integers(1, SAMPLES_PER_CATEGORY_MAX + 1, size=len(categories)).astype(np.float64)
    picks = rng.choice(len(categories), size=count, p=weights / weights.sum())
    return categories[picks]


def write_population(path: PathLike, pop: SyntheticPopulation) -> Path:
    categories = []
    for key in pop.categories:
        curve = pop.curves[key]
        categories.append(
            {
                "features": list(key),
                "a": curve.params.a,
                "b": curve.params.b,
                "mu": curve.params.mu,
                "delta": curve.params.delta,
                "curve": [float(value) for value in curve.y],
            }
        )
    return write_json(
        path,
        POPULATION_KIND,
        {"n1": pop.n1, "n2": pop.n2, "n3": pop.n3, "seed": pop.seed, "categories": categories},
    )


def read_population(path: PathLike) -> SyntheticPopulation:
    document = read_json(path, POPULATION_KIND)
    curves: dict[Features, GroundTruthCurve] = {}
    for entry in document["categories"]:
        key = (int(entry["features"][0]), int(entry["features"][1]), int(entry["features"][2]))
        params = CurveParams(a=entry["a"], b=entry["b"], mu=entry["mu"], delta=entry["delta"])
        y = np.asarray(entry["curve"], dtype=np.float64)
        y.setflags(write=False)
        curves[key] = GroundTruthCurve(params=params, y=y)
    pop = SyntheticPopulation(
        n1=int(document["n1"]),
        n2=int(document["n2"]),
        n3=int(document["n3"]),
        seed=document.get("seed"),
        curves=curves,
    )
    if len(curves) != pop.n1 * pop.n2 * pop.n3:
        raise InvalidArgumentError(f"{path}: expected {pop.n1 * pop.n2 * pop.n3} categories, found {len(curves)}")
    return pop
