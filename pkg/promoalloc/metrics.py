"""Evaluation metrics for response models and allocation plans.

Means are taken with `math.fsum`, so results do not depend on how users are
partitioned or ordered.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import rankdata

from .allocator.plan import AllocationPlan
from .dataset import TrainingSample, to_arrays
from .errors import InvalidArgumentError
from .model.grid import IncentiveGrid
from .model.losses import log_loss
from .model.protocol import ResponseModelProtocol
from .records import write_json
from .synthdata import INCENTIVE_MAX, SyntheticPopulation

logger = logging.getLogger(__name__)

REPORT_KIND = "metrics_report"
DEFAULT_EQ_TOL = 1e-9
LOW_MATCH_RATE = 0.5


@dataclass(frozen=True)
class MetricSettings:
    eq_tol: float = DEFAULT_EQ_TOL
    # None means two grid steps (twice the widest gap).
    mlss_radius: float | None = None

    def radius_for(self, grid: IncentiveGrid) -> float:
        return self.mlss_radius if self.mlss_radius is not None else default_mlss_radius(grid)


def _mean(values: np.ndarray | Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InvalidArgumentError("Cannot average an empty set")
    return math.fsum(values) / values.size


def logloss_from_predictions(p: np.ndarray, labels: np.ndarray) -> float:
    return _mean(log_loss(p, labels))


def logloss_metric(model: ResponseModelProtocol, samples: Sequence[TrainingSample]) -> float:
    """Unweighted mean log loss; IPS weights on the samples are ignored."""
    if not samples:
        raise InvalidArgumentError("logloss needs at least one sample")
    arrays = to_arrays(samples, use_weights=False)
    p = model.predict_levels(arrays.features, model.grid.level_indices(arrays.incentives))
    return logloss_from_predictions(p, arrays.labels)


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = int(np.sum(labels == 1))
    negatives = int(np.sum(labels == 0))
    if positives == 0 or negatives == 0:
        raise InvalidArgumentError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    rank_sum = math.fsum(ranks[labels == 1])
    return (rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives)


def auc_roc(model: ResponseModelProtocol, samples: Sequence[TrainingSample]) -> float:
    arrays = to_arrays(samples, use_weights=False)
    scores = model.predict_levels(arrays.features, model.grid.level_indices(arrays.incentives))
    return auc_from_scores(scores, arrays.labels)


def pair_rates(curves: np.ndarray, eq_tol: float = DEFAULT_EQ_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-user (reversed, equal, concordant) pair fractions over all level pairs."""
    curves = np.asarray(curves, dtype=np.float64)
    d = curves.shape[1]
    if d < 2:
        raise InvalidArgumentError(f"Pair rates need at least 2 levels, got {d}")
    low, high = np.triu_indices(d, k=1)
    diff = curves[:, high] - curves[:, low]
    pairs = d * (d - 1) / 2.0
    reversed_ = np.sum(diff < -eq_tol, axis=1) / pairs
    equal = np.sum(np.abs(diff) <= eq_tol, axis=1) / pairs
    concordant = np.sum(diff > eq_tol, axis=1) / pairs
    return reversed_, equal, concordant


def _model_curves(model: ResponseModelProtocol, users: np.ndarray, grid: IncentiveGrid | None) -> np.ndarray:
    if grid is not None and grid != model.grid:
        raise InvalidArgumentError(f"Grid {list(grid.levels)} differs from the model grid {list(model.grid.levels)}")
    return model.predict_curves(np.asarray(users, dtype=np.int64).reshape(-1, 3))


def rpr(model, users, grid: IncentiveGrid | None = None, eq_tol: float = DEFAULT_EQ_TOL) -> float:
    return _mean(pair_rates(_model_curves(model, users, grid), eq_tol)[0])


def epr(model, users, grid: IncentiveGrid | None = None, eq_tol: float = DEFAULT_EQ_TOL) -> float:
    return _mean(pair_rates(_model_curves(model, users, grid), eq_tol)[1])


def concordant_pair_rate(model, users, grid: IncentiveGrid | None = None, eq_tol: float = DEFAULT_EQ_TOL) -> float:
    return _mean(pair_rates(_model_curves(model, users, grid), eq_tol)[2])


def default_mlss_radius(grid: IncentiveGrid) -> float:
    return 2.0 * float(np.max(np.diff(grid.as_array())))


def mlss_per_user(curves: np.ndarray, levels: np.ndarray | Sequence[float], radius: float) -> np.ndarray:
    curves = np.asarray(curves, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)
    if levels.size < 3:
        raise InvalidArgumentError(f"MLSS needs at least 3 grid levels, got {levels.size}")
    gaps = np.diff(levels)
    if radius < np.max(gaps):
        raise InvalidArgumentError(f"MLSS radius {radius:g} is below the widest grid gap {np.max(gaps):g}")
    slopes = np.diff(curves, axis=1) / gaps
    left = levels[:-1]
    deviations = []
    for center in levels:
        inside = np.abs(left - center) <= radius
        if np.count_nonzero(inside) < 2:
            continue
        deviations.append(np.std(slopes[:, inside], axis=1))
    if not deviations:
        raise InvalidArgumentError(f"Every MLSS window holds fewer than 2 slopes; increase the radius {radius:g}")
    return np.max(np.stack(deviations), axis=0)


def mlss(model, users, grid: IncentiveGrid | None = None, r: float | None = None) -> float:
    curves = _model_curves(model, users, grid)
    radius = r if r is not None else default_mlss_radius(model.grid)
    return _mean(mlss_per_user(curves, model.grid.as_array(), radius))


def _integer_incentives(grid: IncentiveGrid) -> np.ndarray:
    levels = grid.as_array()
    index = np.rint(levels).astype(np.int64)
    if np.any(index != levels) or np.any(index < 0) or np.any(index > INCENTIVE_MAX):
        raise InvalidArgumentError(f"Grid levels must be integers in 0..{INCENTIVE_MAX}, got {list(grid.levels)}")
    return index


def future_response_synthetic(plan: AllocationPlan, population: SyntheticPopulation) -> float:
    if plan.users is None:
        raise InvalidArgumentError("The plan carries no user features to look up ground truth")
    truth = population.curve_matrix(plan.users)[:, _integer_incentives(plan.grid)]
    return _mean(np.sum(plan.z * truth, axis=1))


@dataclass(frozen=True)
class FutureCost:
    spend_per_capita: float
    limit: float | None
    excess: float | None


def future_cost_synthetic(plan: AllocationPlan, per_capita_limit: float | None = None) -> FutureCost:
    """Expected face-value spend per user and its excess over the per-capita limit."""
    spend = _mean(plan.z @ plan.grid.as_array())
    excess = None if per_capita_limit is None else max(0.0, spend - per_capita_limit)
    return FutureCost(spend_per_capita=spend, limit=per_capita_limit, excess=excess)


@dataclass(frozen=True)
class HoldoutEstimate:
    response: float | None
    cost: float | None
    cost_excess: float | None
    matched_users: int
    unmatched_users: int
    warning: str | None = None

    @property
    def match_rate(self) -> float:
        total = self.matched_users + self.unmatched_users
        return self.matched_users / total if total else 0.0


def future_metrics_holdout(
    plan: AllocationPlan,
    holdout: Sequence[TrainingSample],
    per_capita_limit: float | None = None,
) -> HoldoutEstimate:
    """Match each planned (user type, level) to holdout records with the same features and grid level.

    Holdout incentives are matched on their rounded-down grid index, so a
    record at 15 on a stride-10 grid counts toward level 10.
    """
    if plan.users is None:
        raise InvalidArgumentError("The plan carries no user features to match against the holdout")
    labels: dict[tuple[tuple[int, int, int], int], list[float]] = {}
    costs: dict[tuple[tuple[int, int, int], int], list[float]] = {}
    if holdout:
        levels = plan.grid.level_indices([sample.incentive for sample in holdout])
        for sample, level in zip(holdout, levels):
            key = (sample.features, int(level))
            labels.setdefault(key, []).append(float(sample.label))
            costs.setdefault(key, []).append(float(sample.incentive))

    responses: list[float] = []
    spends: list[float] = []
    unmatched = 0
    for row, z in zip(plan.users, plan.z):
        features = (int(row[0]), int(row[1]), int(row[2]))
        support = np.flatnonzero(z > 0)
        keys = [(features, int(j)) for j in support]
        if not all(key in labels for key in keys):
            unmatched += 1
            continue
        responses.append(math.fsum(z[j] * _mean(labels[key]) for j, key in zip(support, keys)))
        spends.append(math.fsum(z[j] * _mean(costs[key]) for j, key in zip(support, keys)))

    warning = None
    matched = len(responses)
    if matched + unmatched and matched / (matched + unmatched) < LOW_MATCH_RATE:
        warning = f"Only {matched} of {matched + unmatched} users matched the holdout; estimate is unreliable"
        logger.warning(warning)
    cost = _mean(spends) if spends else None
    return HoldoutEstimate(
        response=_mean(responses) if responses else None,
        cost=cost,
        cost_excess=None if cost is None or per_capita_limit is None else max(0.0, cost - per_capita_limit),
        matched_users=matched,
        unmatched_users=unmatched,
        warning=warning,
    )


@dataclass
class MetricsReport:
    model_kind: str
    logloss: float
    auc_roc: float
    rpr: float
    epr: float
    concordant_pair_rate: float
    mlss: float | None
    future_response: float | None
    future_cost: float | None
    future_cost_excess: float | None
    grid: list[float]
    eq_tol: float
    mlss_radius: float
    sample_count: int
    user_count: int
    holdout: dict[str, Any] | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_TABLE_ROWS = (
    ("LogLoss", "logloss"),
    ("AUC-ROC", "auc_roc"),
    ("RPR", "rpr"),
    ("EPR", "epr"),
    ("MLSS", "mlss"),
    ("Future response", "future_response"),
    ("Future cost", "future_cost"),
    ("Future cost excess", "future_cost_excess"),
)


def evaluate(
    model: ResponseModelProtocol,
    samples: Sequence[TrainingSample],
    users: np.ndarray,
    settings: MetricSettings = MetricSettings(),
    plan: AllocationPlan | None = None,
    population: SyntheticPopulation | None = None,
    holdout: Sequence[TrainingSample] | None = None,
    per_capita_limit: float | None = None,
) -> MetricsReport:
    users = np.asarray(users, dtype=np.int64).reshape(-1, 3)
    curves = model.predict_curves(users)
    reversed_, equal, concordant = pair_rates(curves, settings.eq_tol)
    radius = settings.radius_for(model.grid)
    warnings: list[str] = []
    mlss_value = None
    if model.grid.size >= 3:
        mlss_value = _mean(mlss_per_user(curves, model.grid.as_array(), radius))
    else:
        warnings.append(f"MLSS needs at least 3 grid levels, the grid has {model.grid.size}")

    future_response = future_cost = cost_excess = None
    holdout_summary = None
    if plan is not None and population is not None:
        future_response = future_response_synthetic(plan, population)
        cost = future_cost_synthetic(plan, per_capita_limit)
        future_cost, cost_excess = cost.spend_per_capita, cost.excess
    elif plan is not None and holdout is not None:
        estimate = future_metrics_holdout(plan, holdout, per_capita_limit)
        future_response, future_cost, cost_excess = estimate.response, estimate.cost, estimate.cost_excess
        holdout_summary = {"matched_users": estimate.matched_users, "unmatched_users": estimate.unmatched_users}
        if estimate.warning:
            warnings.append(estimate.warning)

    return MetricsReport(
        model_kind=model.kind,
        logloss=logloss_metric(model, samples),
        auc_roc=auc_roc(model, samples),
        rpr=_mean(reversed_),
        epr=_mean(equal),
        concordant_pair_rate=_mean(concordant),
        mlss=mlss_value,
        future_response=future_response,
        future_cost=future_cost,
        future_cost_excess=cost_excess,
        grid=list(model.grid.levels),
        eq_tol=settings.eq_tol,
        mlss_radius=radius,
        sample_count=len(samples),
        user_count=int(users.shape[0]),
        holdout=holdout_summary,
        warnings=warnings,
    )


def _format(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def render_table(reports: Sequence[MetricsReport], labels: Sequence[str] | None = None) -> str:
    labels = list(labels) if labels is not None else [report.model_kind.upper() for report in reports]
    name_width = max(len(name) for name, _ in _TABLE_ROWS)
    widths = [max(len(label), 10) for label in labels]
    lines = [" | ".join([" " * name_width, *(label.rjust(w) for label, w in zip(labels, widths))])]
    lines.append("-" * len(lines[0]))
    for name, attr in _TABLE_ROWS:
        cells = [_format(getattr(report, attr)).rjust(w) for report, w in zip(reports, widths)]
        lines.append(" | ".join([name.ljust(name_width), *cells]))
    first = reports[0]
    lines.append("")
    lines.append(f"grid={first.grid} eq_tol={first.eq_tol:g} mlss_radius={first.mlss_radius:g}")
    for report in reports:
        lines.extend(f"warning: {message}" for message in report.warnings)
    return "\n".join(lines)


def write_report(path: PathLike, reports: Sequence[MetricsReport], labels: Sequence[str] | None = None) -> Path:
    labels = list(labels) if labels is not None else [report.model_kind for report in reports]
    return write_json(
        path,
        REPORT_KIND,
        {"reports": [{"label": label, **report.to_dict()} for label, report in zip(labels, reports)]},
    )


def write_curves_csv(path: PathLike, users: np.ndarray, curves: np.ndarray, grid: IncentiveGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x1", "x2", "x3", *(f"d={level:g}" for level in grid.levels)])
        for row, curve in zip(np.asarray(users).reshape(-1, 3), curves):
            writer.writerow([int(v) for v in row] + [repr(float(p)) for p in curve])
    return path
