import os
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from os import PathLike
from pathlib import Path
from typing import Any, Sequence

from .allocator.costs import CostModelProtocol, parse_cost_model
from .biascorrect import DEFAULT_BUCKET, DEFAULT_CLIP_MAX, DEFAULT_SMOOTHING
from .errors import ConfigError, InvalidArgumentError
from .metrics import DEFAULT_EQ_TOL, MetricSettings
from .model.grid import IncentiveGrid
from .model.training import TrainConfig

CONFIG_ENV_VAR = "PROMOALLOC_CONFIG"
MODEL_KINDS: tuple[str, ...] = ("dipn", "mlp")
FUTURE_SOURCES: tuple[str, ...] = ("ground_truth", "holdout")
PROPENSITY_SOURCES: tuple[str, ...] = ("fitted", "true")


@dataclass(frozen=True)
class PathsConfig:
    """Artifact locations. Relative names resolve under `output_dir`; `{kind}` expands to the model kind."""

    output_dir: str = "run"
    population: str = "population.json"
    train: str = "train.jsonl"
    validation: str = "validation.jsonl"
    test: str = "test.jsonl"
    true_propensity: str = "true_propensity.json"
    propensity: str = "propensity.json"
    model: str = "model_{kind}.json"
    training_log: str = "training_log_{kind}.jsonl"
    plan: str = "plan_{kind}.jsonl"
    dual: str = "dual_{kind}.json"
    report: str = "report.txt"
    report_json: str = "report.json"
    curves: str = "curves_{kind}.csv"

    def resolve(self, name: str, kind: str | None = None) -> Path:
        value = getattr(self, name)
        if "{kind}" in value:
            if kind is None:
                raise InvalidArgumentError(f"Path {name!r} needs a model kind")
            value = value.format(kind=kind)
        path = Path(value)
        return path if path.is_absolute() else Path(self.output_dir) / path


@dataclass(frozen=True)
class PopulationConfig:
    n1: int = 2
    n2: int = 2
    n3: int = 2
    n_samples: int | None = 20000
    splits: tuple[int, int, int] = (5000, 5000, 10000)
    # 0 draws a randomized log
    bias_strength: float = 0.0

    def __post_init__(self):
        if min(self.n1, self.n2, self.n3) < 1:
            raise ConfigError(f"Category counts must be >= 1, got ({self.n1}, {self.n2}, {self.n3})")
        if len(self.splits) != 3 or any(size < 0 for size in self.splits):
            raise ConfigError(f"splits must be three sizes >= 0, got {list(self.splits)}")
        if self.n_samples is not None and sum(self.splits) > self.n_samples:
            raise ConfigError(f"splits {list(self.splits)} need more than n_samples={self.n_samples}")
        if self.bias_strength < 0:
            raise ConfigError(f"bias_strength must be >= 0, got {self.bias_strength}")


@dataclass(frozen=True)
class GridConfig:
    stride: int = 10
    levels: tuple[float, ...] | None = None

    def __post_init__(self):
        self.to_grid()

    def to_grid(self) -> IncentiveGrid:
        try:
            if self.levels is not None:
                return IncentiveGrid.from_levels(self.levels)
            return IncentiveGrid.from_stride(self.stride)
        except ValueError as e:
            raise ConfigError(f"Invalid grid: {e}") from e


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "dipn"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"Unknown model kind {self.kind!r}; expected one of {list(MODEL_KINDS)}")


@dataclass(frozen=True)
class BiasCorrectionConfig:
    enabled: bool = False
    source: str = "fitted"
    bucket: tuple[int, ...] = DEFAULT_BUCKET
    smoothing: float = DEFAULT_SMOOTHING
    clip_max: float = DEFAULT_CLIP_MAX

    def __post_init__(self):
        if self.source not in PROPENSITY_SOURCES:
            raise ConfigError(f"Unknown propensity source {self.source!r}; expected one of {list(PROPENSITY_SOURCES)}")


@dataclass(frozen=True)
class BudgetLimit:
    budget: float
    cost: str = "face_value"


@dataclass(frozen=True)
class BudgetConfig:
    """Exactly one of `total`, `per_capita` and `multi` is set."""

    total: float | None = None
    per_capita: float | None = 11.0
    multi: tuple[BudgetLimit, ...] | None = None
    cost: str = "face_value"
    # applies to `multi` only
    multi_per_capita: bool = False

    def __post_init__(self):
        present = [name for name in ("total", "per_capita", "multi") if getattr(self, name) is not None]
        if len(present) != 1:
            raise ConfigError(f"Budget needs exactly one of total, per_capita or multi; got {present or 'none'}")
        if self.multi is not None and not self.multi:
            raise ConfigError("Budget multi needs at least one {budget, cost} entry")
        for spec in self.cost_specs:
            try:
                parse_cost_model(spec)
            except ValueError as e:
                raise ConfigError(f"Invalid budget cost {spec!r}: {e}") from e

    @property
    def mode(self) -> str:
        if self.multi is not None:
            return "multi"
        return "total" if self.total is not None else "per_capita"

    @property
    def is_per_capita(self) -> bool:
        return self.per_capita is not None or (self.multi is not None and self.multi_per_capita)

    @property
    def cost_specs(self) -> tuple[str, ...]:
        if self.multi is not None:
            return tuple(limit.cost for limit in self.multi)
        return (self.cost,)

    @property
    def values(self) -> tuple[float, ...]:
        if self.multi is not None:
            return tuple(float(limit.budget) for limit in self.multi)
        return (float(self.total if self.total is not None else self.per_capita),)

    def cost_models(self) -> tuple[CostModelProtocol, ...]:
        return tuple(parse_cost_model(spec) for spec in self.cost_specs)

    def per_capita_limit(self, n_users: int) -> float | None:
        """Face-value spend limit per user, when the budget defines one."""
        if self.cost_specs[0] != "face_value":
            return None
        if self.is_per_capita:
            return self.values[0]
        return self.values[0] / n_users if n_users else None


@dataclass(frozen=True)
class MetricsConfig:
    eq_tol: float = DEFAULT_EQ_TOL
    mlss_radius: float | None = None
    future_source: str = "ground_truth"

    def __post_init__(self):
        if self.future_source not in FUTURE_SOURCES:
            raise ConfigError(f"Unknown future_source {self.future_source!r}; expected one of {list(FUTURE_SOURCES)}")

    def settings(self) -> MetricSettings:
        return MetricSettings(eq_tol=self.eq_tol, mlss_radius=self.mlss_radius)


@dataclass(frozen=True)
class SeedsConfig:
    population: int = 0
    data: int = 1
    split: int = 2
    train: int = 0


@dataclass(frozen=True)
class RunConfig:
    preset: str | None = None
    paths: PathsConfig = field(default_factory=PathsConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bias_correction: BiasCorrectionConfig = field(default_factory=BiasCorrectionConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    @property
    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seeds.train)

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["train"] = self.train.to_dict()
        # the training seed lives in [seeds]
        values["train"].pop("seed")
        values.pop("preset")
        return values


_SECTIONS: dict[str, type] = {
    "paths": PathsConfig,
    "population": PopulationConfig,
    "grid": GridConfig,
    "model": ModelConfig,
    "bias_correction": BiasCorrectionConfig,
    "budget": BudgetConfig,
    "metrics": MetricsConfig,
    "seeds": SeedsConfig,
}
_TUPLE_FIELDS = {"splits", "levels", "bucket"}


def _build_section(name: str, values: dict[str, Any]) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    cls = _SECTIONS[name]
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in [{name}]: {unknown}")
    values = dict(values)
    for key in _TUPLE_FIELDS & set(values):
        if values[key] is not None:
            values[key] = tuple(values[key])
    if name == "budget" and values.get("multi") is not None:
        values["multi"] = tuple(_budget_limit(entry) for entry in values["multi"])
    try:
        return cls(**values)
    except (TypeError, InvalidArgumentError) as e:
        raise ConfigError(f"Invalid [{name}] section: {e}") from e


def _budget_limit(entry: Any) -> BudgetLimit:
    if isinstance(entry, BudgetLimit):
        return entry
    if not isinstance(entry, dict) or "budget" not in entry or set(entry) - {"budget", "cost"}:
        raise ConfigError(f"Each budget multi entry needs keys budget and optional cost, got {entry!r}")
    return BudgetLimit(budget=float(entry["budget"]), cost=str(entry.get("cost", "face_value")))


def _build_train(values: dict[str, Any]) -> TrainConfig:
    if "seed" in values:
        raise ConfigError("Set the training seed under [seeds] train, not [train] seed")
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid [train] section: {e}") from e


def config_from_dict(values: dict[str, Any], preset: str | None = None) -> RunConfig:
    known = set(_SECTIONS) | {"train"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown config sections: {unknown}")
    sections = {name: _build_section(name, values.get(name, {})) for name in _SECTIONS}
    return RunConfig(preset=preset, train=_build_train(dict(values.get("train", {}))), **sections)


PRESETS: dict[str, RunConfig] = {
    "synthetic1": RunConfig(preset="synthetic1", population=PopulationConfig(n1=2, n2=2, n3=2)),
    "synthetic2": RunConfig(preset="synthetic2", population=PopulationConfig(n1=3, n2=5, n3=7)),
}

_BUDGET_FORMS = ("total", "per_capita", "multi")


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for name, values in update.items():
        if isinstance(values, dict) and isinstance(merged.get(name), dict):
            section = dict(merged[name])
            if name == "budget" and any(form in values for form in _BUDGET_FORMS):
                # a new budget form replaces the inherited one
                for form in _BUDGET_FORMS:
                    section[form] = None
            section.update(values)
            merged[name] = section
        else:
            merged[name] = values
    return merged


def default_config_path() -> Path | None:
    value = os.environ.get(CONFIG_ENV_VAR)
    return Path(value) if value else None


def read_config_file(path: PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file does not exist: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Cannot parse config file {path}: {e}") from e


def load_config(
    path: PathLike | None = None,
    preset: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Build a RunConfig: defaults < preset < config file < overrides.

    The file may name a preset with a top-level `preset` key; an explicit
    `preset` argument wins over it.
    """
    document = read_config_file(path) if path is not None else {}
    file_preset = document.pop("preset", None)
    preset = preset or file_preset
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}; expected one of {sorted(PRESETS)}")

    base = PRESETS[preset] if preset is not None else RunConfig()
    merged = _merge(base.to_dict(), document)
    if overrides:
        merged = _merge(merged, overrides)
    return config_from_dict(merged, preset=preset)


def missing_paths(paths: Sequence[Path]) -> list[Path]:
    return [path for path in paths if not path.exists()]
