from dataclasses import dataclass, replace
from os import PathLike
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .records import read_jsonl, write_jsonl

DATASET_KIND = "dataset"

Features = tuple[int, int, int]


@dataclass(frozen=True)
class TrainingSample:
    features: Features
    incentive: int
    label: int
    weight: float = 1.0
    propensity: float | None = None

    def __post_init__(self):
        if len(self.features) != 3:
            raise InvalidArgumentError(f"features must be a category triple, got {self.features!r}")
        if any(value < 0 for value in self.features):
            raise InvalidArgumentError(f"category indices must be >= 0, got {self.features!r}")
        if self.label not in (0, 1):
            raise InvalidArgumentError(f"label must be 0 or 1, got {self.label!r}")
        if self.weight < 0:
            raise InvalidArgumentError(f"weight must be >= 0, got {self.weight}")

    def with_weight(self, weight: float, propensity: float | None = None) -> "TrainingSample":
        return replace(self, weight=weight, propensity=self.propensity if propensity is None else propensity)


@dataclass(frozen=True)
class SampleArrays:
    """Columnar view of a sample list, the shape every model and metric consumes."""

    features: np.ndarray
    incentives: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, index: np.ndarray) -> "SampleArrays":
        return SampleArrays(
            features=self.features[index],
            incentives=self.incentives[index],
            labels=self.labels[index],
            weights=self.weights[index],
        )


def to_arrays(samples: Sequence[TrainingSample], use_weights: bool = True) -> SampleArrays:
    count = len(samples)
    features = np.zeros((count, 3), dtype=np.int64)
    incentives = np.zeros(count, dtype=np.float64)
    labels = np.zeros(count, dtype=np.float64)
    weights = np.ones(count, dtype=np.float64)
    for i, sample in enumerate(samples):
        features[i] = sample.features
        incentives[i] = sample.incentive
        labels[i] = sample.label
        if use_weights:
            weights[i] = sample.weight
    return SampleArrays(features=features, incentives=incentives, labels=labels, weights=weights)


def unique_users(samples: Iterable[TrainingSample]) -> np.ndarray:
    rows = sorted({sample.features for sample in samples})
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def sample_to_record(sample: TrainingSample) -> dict:
    record: dict = {
        "features": list(sample.features),
        "incentive": sample.incentive,
        "label": sample.label,
        "weight": sample.weight,
    }
    if sample.propensity is not None:
        record["propensity"] = sample.propensity
    return record


def sample_from_record(record: dict) -> TrainingSample:
    try:
        features = tuple(int(value) for value in record["features"])
        return TrainingSample(
            features=(features[0], features[1], features[2]),
            incentive=int(record["incentive"]),
            label=int(record["label"]),
            weight=float(record.get("weight", 1.0)),
            propensity=None if record.get("propensity") is None else float(record["propensity"]),
        )
    except (KeyError, IndexError, TypeError) as e:
        raise InvalidArgumentError(f"Malformed sample record: {record!r}") from e


def write_dataset(path: PathLike, samples: Iterable[TrainingSample], split: str | None = None) -> Path:
    header = {"split": split} if split else None
    return write_jsonl(path, DATASET_KIND, (sample_to_record(sample) for sample in samples), header=header)


def read_dataset(path: PathLike) -> list[TrainingSample]:
    _, records = read_jsonl(path, DATASET_KIND)
    return [sample_from_record(record) for record in records]
