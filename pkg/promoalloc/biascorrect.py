import logging
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Features, TrainingSample
from .errors import InvalidArgumentError
from .model.grid import IncentiveGrid
from .records import read_json, write_json

logger = logging.getLogger(__name__)

PROPENSITY_KIND = "propensity_table"
DEFAULT_BUCKET: tuple[int, ...] = (0, 1, 2)
DEFAULT_SMOOTHING = 1.0
DEFAULT_CLIP_MAX = 100.0

Bucket = tuple[int, ...]


@dataclass(frozen=True)
class PropensityTable:
    """Assignment probability of each incentive level within each feature bucket.

    `levels` are the raw incentive values when `grid` is None; otherwise
    incentives are binned onto the grid (rounding down) and `levels` are the
    grid levels.
    """

    bucket_spec: Bucket
    smoothing: float
    levels: tuple[float, ...]
    probabilities: dict[Bucket, np.ndarray]
    global_probabilities: np.ndarray
    grid: IncentiveGrid | None = None

    @property
    def p_min(self) -> float:
        values = [self.global_probabilities, *self.probabilities.values()]
        return float(min(np.min(row) for row in values))

    def bucket_of(self, features: Sequence[int]) -> Bucket:
        return tuple(int(features[f]) for f in self.bucket_spec)

    def level_position(self, incentive: float) -> int:
        if self.grid is not None:
            return self.grid.level_index(incentive)
        try:
            return self.levels.index(float(incentive))
        except ValueError as e:
            raise InvalidArgumentError(f"Incentive {incentive} was never observed when fitting the table") from e

    def row(self, features: Sequence[int]) -> np.ndarray:
        """Bucket probabilities, or the all-users frequencies for an unseen bucket."""
        return self.probabilities.get(self.bucket_of(features), self.global_probabilities)

    def lookup(self, features: Sequence[int], incentive: float) -> float:
        return float(self.row(features)[self.level_position(incentive)])


def _validate_bucket(bucket_spec: Sequence[int]) -> Bucket:
    bucket = tuple(int(f) for f in bucket_spec)
    if len(set(bucket)) != len(bucket) or any(f not in (0, 1, 2) for f in bucket):
        raise InvalidArgumentError(f"bucket_spec must list distinct feature indices from 0..2, got {list(bucket_spec)}")
    return bucket


def _normalize(counts: np.ndarray, smoothing: float) -> np.ndarray:
    smoothed = counts + smoothing
    return smoothed / smoothed.sum()


def fit_propensity(
    samples: Sequence[TrainingSample],
    bucket_spec: Sequence[int] = DEFAULT_BUCKET,
    smoothing: float = DEFAULT_SMOOTHING,
    grid: IncentiveGrid | None = None,
) -> PropensityTable:
    if not samples:
        raise InvalidArgumentError("fit_propensity needs at least one sample")
    if smoothing < 0:
        raise InvalidArgumentError(f"smoothing must be >= 0, got {smoothing}")
    bucket = _validate_bucket(bucket_spec)

    incentives = np.asarray([sample.incentive for sample in samples], dtype=np.float64)
    if grid is not None:
        levels = grid.levels
        positions = grid.level_indices(incentives)
    else:
        observed = np.unique(incentives)
        levels = tuple(float(level) for level in observed)
        positions = np.searchsorted(observed, incentives)

    # Counting ignores sample weights so refitting weighted samples is a no-op.
    per_bucket: dict[Bucket, np.ndarray] = {}
    for sample, position in zip(samples, positions):
        key = tuple(int(sample.features[f]) for f in bucket)
        counts = per_bucket.get(key)
        if counts is None:
            counts = np.zeros(len(levels))
            per_bucket[key] = counts
        counts[position] += 1.0
    global_counts = np.bincount(positions, minlength=len(levels)).astype(np.float64)

    table = PropensityTable(
        bucket_spec=bucket,
        smoothing=float(smoothing),
        levels=tuple(float(level) for level in levels),
        probabilities={key: _normalize(counts, smoothing) for key, counts in per_bucket.items()},
        global_probabilities=_normalize(global_counts, smoothing),
        grid=grid,
    )
    logger.info("Fitted propensities for %d buckets over %d levels", len(per_bucket), len(levels))
    return table


def true_propensity_table(
    propensities: Mapping[Features, np.ndarray],
    incentives: Sequence[float] | np.ndarray,
    grid: IncentiveGrid | None = None,
) -> PropensityTable:
    """Table from known per-category assignment probabilities over `incentives`."""
    if not propensities:
        raise InvalidArgumentError("true_propensity_table needs at least one category")
    values = np.asarray(incentives, dtype=np.float64)
    rows: dict[Bucket, np.ndarray] = {}
    for key, probs in propensities.items():
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != values.shape:
            raise InvalidArgumentError(f"Category {key} has {probs.size} probabilities for {values.size} incentives")
        if grid is not None:
            probs = np.bincount(grid.level_indices(values), weights=probs, minlength=grid.size)
        rows[tuple(int(v) for v in key)] = probs / probs.sum()
    global_row = np.mean(np.stack(list(rows.values())), axis=0)
    levels = grid.levels if grid is not None else tuple(float(v) for v in values)
    return PropensityTable(
        bucket_spec=DEFAULT_BUCKET,
        smoothing=0.0,
        levels=tuple(float(level) for level in levels),
        probabilities=rows,
        global_probabilities=global_row / global_row.sum(),
        grid=grid,
    )


def attach_weights(
    samples: Sequence[TrainingSample],
    table: PropensityTable,
    clip_max: float = DEFAULT_CLIP_MAX,
) -> list[TrainingSample]:
    if clip_max < 1:
        raise InvalidArgumentError(f"clip_max must be >= 1, got {clip_max}")
    weighted: list[TrainingSample] = []
    clipped = 0
    for sample in samples:
        p = table.lookup(sample.features, sample.incentive)
        raw = 1.0 / p if p > 0 else float("inf")
        if raw > clip_max:
            clipped += 1
        weighted.append(sample.with_weight(min(raw, clip_max), propensity=p))
    if clipped:
        logger.warning("%d of %d IPS weights clipped at %g", clipped, len(weighted), clip_max)
    return weighted


def save_propensity_table(path: PathLike, table: PropensityTable) -> Path:
    return write_json(
        path,
        PROPENSITY_KIND,
        {
            "bucket_spec": list(table.bucket_spec),
            "smoothing": table.smoothing,
            "levels": list(table.levels),
            "grid": list(table.grid.levels) if table.grid is not None else None,
            "global": [float(p) for p in table.global_probabilities],
            "buckets": [
                {"bucket": list(key), "probabilities": [float(p) for p in row]}
                for key, row in sorted(table.probabilities.items())
            ],
        },
    )


def load_propensity_table(path: PathLike) -> PropensityTable:
    document = read_json(path, PROPENSITY_KIND)
    return PropensityTable(
        bucket_spec=tuple(document["bucket_spec"]),
        smoothing=float(document["smoothing"]),
        levels=tuple(float(level) for level in document["levels"]),
        probabilities={
            tuple(int(v) for v in entry["bucket"]): np.asarray(entry["probabilities"], dtype=np.float64)
            for entry in document["buckets"]
        },
        global_probabilities=np.asarray(document["global"], dtype=np.float64),
        grid=IncentiveGrid.from_levels(document["grid"]) if document.get("grid") else None,
    )
