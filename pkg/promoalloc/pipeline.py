import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocator import (
    AllocationPlan,
    DualSolution,
    build_matrix,
    load_dual,
    online_decide,
    read_plan,
    save_dual,
    solve_budget,
    write_plan,
)
from .biascorrect import (
    PropensityTable,
    attach_weights,
    fit_propensity,
    load_propensity_table,
    save_propensity_table,
    true_propensity_table,
)
from .config import MODEL_KINDS, RunConfig, missing_paths
from .dataset import TrainingSample, read_dataset, write_dataset
from .errors import InvalidArgumentError
from .metrics import MetricsReport, evaluate, render_table, write_curves_csv, write_report
from .model import (
    EpochRecord,
    ProgressCallback,
    TrainingProgress,
    load_model,
    model_checksum,
    new_model,
    save_model,
    train_model,
)
from .records import write_jsonl
from .synthdata import (
    draw_biased_dataset,
    draw_dataset,
    gen_population,
    read_population,
    split_dataset,
    write_population,
)

logger = logging.getLogger(__name__)

TRAINING_LOG_KIND = "training_log"


@dataclass(frozen=True)
class GenResult:
    population_path: Path
    split_paths: tuple[Path, Path, Path]
    sample_count: int


@dataclass(frozen=True)
class TrainResult:
    kind: str
    model_path: Path
    log_path: Path
    records: list[EpochRecord]


@dataclass(frozen=True)
class AllocateResult:
    kind: str
    plan_path: Path
    dual_path: Path
    dual: DualSolution
    plan: AllocationPlan


@dataclass(frozen=True)
class EvaluateResult:
    reports: list[MetricsReport]
    labels: list[str]
    report_path: Path

    def render(self) -> str:
        return render_table(self.reports, self.labels)


@dataclass(frozen=True)
class Decision:
    level: int
    incentive: float
    features: tuple[int, int, int]


class _Pipeline:
    def __init__(
        self,
        config: RunConfig,
        force: bool = False,
        progress_callback: ProgressCallback | None = None,
    ):
        self._config: RunConfig = config
        self._paths = config.paths
        self._force: bool = force
        self._progress_callback: ProgressCallback | None = progress_callback

    def artifact_path(self, name: str, kind: str | None = None) -> Path:
        """Resolved location of one named run artifact, optionally per model kind."""
        return self._paths.resolve(name, kind)

    def _require(self, paths: Sequence[Path], stage: str) -> None:
        missing = missing_paths(paths)
        if missing:
            listed = ", ".join(str(path) for path in missing)
            raise InvalidArgumentError(f"{stage} is missing inputs: {listed}")

    def _claim(self, paths: Sequence[Path]) -> None:
        if self._force:
            return
        existing = [path for path in paths if path.exists()]
        if existing:
            listed = ", ".join(str(path) for path in existing)
            raise InvalidArgumentError(f"Refusing to overwrite {listed}; pass --force to replace")

    def _kind(self, kind: str | None) -> str:
        kind = kind or self._config.model.kind
        if kind not in MODEL_KINDS:
            raise InvalidArgumentError(f"Unknown model kind {kind!r}; expected one of {list(MODEL_KINDS)}")
        return kind

    def gen(self) -> GenResult:
        cfg = self._config
        population_path = self.artifact_path("population")
        split_paths = (self.artifact_path("train"), self.artifact_path("validation"), self.artifact_path("test"))
        outputs = [population_path, *split_paths]
        if cfg.population.bias_strength > 0:
            outputs.append(self.artifact_path("true_propensity"))
        self._claim(outputs)

        spec = cfg.population
        pop = gen_population(spec.n1, spec.n2, spec.n3, seed=cfg.seeds.population)
        if spec.bias_strength > 0:
            biased = draw_biased_dataset(pop, spec.bias_strength, seed=cfg.seeds.data, n_samples=spec.n_samples)
            samples = biased.samples
            table = true_propensity_table(biased.propensities, biased.levels, cfg.grid.to_grid())
            save_propensity_table(self.artifact_path("true_propensity"), table)
        else:
            samples = draw_dataset(pop, seed=cfg.seeds.data, n_samples=spec.n_samples)

        splits = split_dataset(samples, spec.splits, seed=cfg.seeds.split)
        write_population(population_path, pop)
        for path, name, split in zip(split_paths, ("train", "validation", "test"), splits):
            write_dataset(path, split, split=name)
        logger.info("Generated %d samples over %d categories", len(samples), len(pop.categories))
        return GenResult(population_path=population_path, split_paths=split_paths, sample_count=len(samples))

    def _weighted(self, samples: list[TrainingSample]) -> list[TrainingSample]:
        settings = self._config.bias_correction
        grid = self._config.grid.to_grid()
        table: PropensityTable
        if settings.source == "true":
            self._require([self.artifact_path("true_propensity")], "Bias correction")
            table = load_propensity_table(self.artifact_path("true_propensity"))
        else:
            table = fit_propensity(samples, settings.bucket, settings.smoothing, grid)
            save_propensity_table(self.artifact_path("propensity"), table)
        return attach_weights(samples, table, settings.clip_max)

    def train(self, kind: str | None = None) -> TrainResult:
        kind = self._kind(kind)
        cfg = self._config
        model_path, log_path = self.artifact_path("model", kind), self.artifact_path("training_log", kind)
        self._require([self.artifact_path(name) for name in ("population", "train", "validation")], "train")
        self._claim([model_path, log_path])

        pop = read_population(self.artifact_path("population"))
        train = read_dataset(self.artifact_path("train"))
        validation = read_dataset(self.artifact_path("validation"))
        if cfg.bias_correction.enabled:
            train = self._weighted(train)

        train_cfg = cfg.train_config
        records: list[EpochRecord] = []

        def on_progress(progress: TrainingProgress) -> None:
            if progress.record is not None:
                records.append(progress.record)
            if self._progress_callback:
                self._progress_callback(progress)

        model = new_model(kind, cfg.grid.to_grid(), pop.vocab_sizes, train_cfg)
        model = train_model(model, train, train_cfg, validation, on_progress)
        save_model(model_path, model, train_cfg)
        write_jsonl(
            log_path,
            TRAINING_LOG_KIND,
            (record.to_record() for record in records),
            header={"model_kind": kind, "train_config": train_cfg.to_dict(), "ips": cfg.bias_correction.enabled},
        )
        logger.info("Trained %s model over %d epochs", kind, len(records))
        return TrainResult(kind=kind, model_path=model_path, log_path=log_path, records=records)

    def allocate(self, kind: str | None = None) -> AllocateResult:
        kind = self._kind(kind)
        budget = self._config.budget
        plan_path, dual_path = self.artifact_path("plan", kind), self.artifact_path("dual", kind)
        self._require([self.artifact_path("model", kind), self.artifact_path("test")], "allocate")
        self._claim([plan_path, dual_path])

        model, _ = load_model(self.artifact_path("model", kind))
        users = np.asarray([sample.features for sample in read_dataset(self.artifact_path("test"))], dtype=np.int64)
        matrix = build_matrix(model, users, cost_models=budget.cost_models())
        dual, plan = solve_budget(matrix, budget.values, per_capita=budget.is_per_capita)
        dual = replace(dual, model_checksum=model_checksum(model))

        save_dual(dual_path, dual)
        write_plan(plan_path, plan, dual)
        logger.info(
            "Allocated %d users: spend %s against %s (%s)",
            plan.n_users,
            [round(float(v), 4) for v in dual.spend],
            list(budget.values),
            budget.mode,
        )
        return AllocateResult(kind=kind, plan_path=plan_path, dual_path=dual_path, dual=dual, plan=plan)

    def evaluate(self, kinds: Sequence[str] | None = None, as_json: bool = False) -> EvaluateResult:
        kinds = [self._kind(kind) for kind in (kinds or [None])]
        cfg = self._config
        ground_truth = cfg.metrics.future_source == "ground_truth"
        inputs = [self.artifact_path("test")]
        if ground_truth:
            inputs.append(self.artifact_path("population"))
        for kind in kinds:
            inputs.extend([self.artifact_path("model", kind), self.artifact_path("plan", kind)])
        self._require(inputs, "evaluate")
        report_path = self.artifact_path("report_json" if as_json else "report")
        self._claim([report_path, *(self.artifact_path("curves", kind) for kind in kinds)])

        test = read_dataset(self.artifact_path("test"))
        users = np.asarray([sample.features for sample in test], dtype=np.int64)
        population = read_population(self.artifact_path("population")) if ground_truth else None
        reports: list[MetricsReport] = []
        for kind in kinds:
            model, _ = load_model(self.artifact_path("model", kind))
            plan = read_plan(self.artifact_path("plan", kind))
            report = evaluate(
                model,
                test,
                users,
                cfg.metrics.settings(),
                plan=plan,
                population=population,
                holdout=None if ground_truth else test,
                per_capita_limit=cfg.budget.per_capita_limit(plan.n_users),
            )
            reports.append(report)
            curve_users = np.unique(users, axis=0)
            write_curves_csv(
                self.artifact_path("curves", kind), curve_users, model.predict_curves(curve_users), model.grid
            )

        labels = [kind.upper() for kind in kinds]
        if as_json:
            write_report(report_path, reports, labels)
        else:
            report_path.parent.mkdir(parents=True, exist_ok=True)
            report_path.write_text(render_table(reports, labels) + "\n", encoding="utf-8")
        return EvaluateResult(reports=reports, labels=labels, report_path=report_path)

    def decide(self, features: Sequence[int], kind: str | None = None) -> Decision:
        kind = self._kind(kind)
        self._require([self.artifact_path("model", kind), self.artifact_path("dual", kind)], "decide")
        if len(features) != 3:
            raise InvalidArgumentError(f"Expected three categorical features, got {list(features)}")
        model, _ = load_model(self.artifact_path("model", kind))
        dual = load_dual(self.artifact_path("dual", kind))
        level = online_decide(
            dual,
            model,
            features,
            cost_models=self._config.budget.cost_models(),
            model_checksum=model_checksum(model),
        )
        return Decision(
            level=level,
            incentive=model.grid.levels[level],
            features=(int(features[0]), int(features[1]), int(features[2])),
        )


def run_gen(config: RunConfig, force: bool = False) -> GenResult:
    return _Pipeline(config, force).gen()


def run_train(
    config: RunConfig,
    kind: str | None = None,
    force: bool = False,
    progress_callback: ProgressCallback | None = None,
) -> TrainResult:
    return _Pipeline(config, force, progress_callback).train(kind)


def run_allocate(config: RunConfig, kind: str | None = None, force: bool = False) -> AllocateResult:
    return _Pipeline(config, force).allocate(kind)


def run_evaluate(
    config: RunConfig,
    kinds: Sequence[str] | None = None,
    force: bool = False,
    as_json: bool = False,
) -> EvaluateResult:
    return _Pipeline(config, force).evaluate(kinds, as_json)


def run_decide(config: RunConfig, features: Sequence[int], kind: str | None = None) -> Decision:
    return _Pipeline(config).decide(features, kind)


def run_compare(
    config: RunConfig,
    force: bool = False,
    as_json: bool = False,
    progress_callback: ProgressCallback | None = None,
) -> EvaluateResult:
    """Generate data if absent, then train, allocate and evaluate DIPN and MLP side by side."""
    pipeline = _Pipeline(config, force, progress_callback)
    if missing_paths([pipeline.artifact_path(name) for name in ("population", "train", "test")]):
        pipeline.gen()
    for kind in MODEL_KINDS:
        pipeline.train(kind)
        pipeline.allocate(kind)
    return pipeline.evaluate(MODEL_KINDS, as_json)
