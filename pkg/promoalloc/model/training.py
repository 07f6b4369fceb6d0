import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Sequence

import numpy as np

from ..dataset import SampleArrays, TrainingSample, to_arrays
from ..errors import EmptyPhaseDataError, InvalidArgumentError
from .dipn import BIAS_PARAM_NAMES, UPLIFT_PARAM_NAMES, DipnModel
from .grid import IncentiveGrid
from .losses import PROB_CLAMP, decayed_alpha
from .mlp import DEFAULT_HIDDEN, MlpModel
from .optim import make_optimizer
from .protocol import ResponseModelProtocol

logger = logging.getLogger(__name__)

PHASE_BIAS = "blp"
PHASE_UPLIFT = "ulp"
PHASE_MLP = "mlp"
_PHASE_IDS = {PHASE_BIAS: 1, PHASE_UPLIFT: 2, PHASE_MLP: 3}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    optimizer: str = "adam"
    batch_size: int = 256
    bias_epochs: int = 20
    uplift_epochs: int = 20
    mlp_epochs: int = 20
    alpha_upper: float = 1.0
    alpha_lower: float = 0.01
    decay: float = 1e-4
    embed_dim: int = 8
    mlp_hidden: tuple[int, ...] = DEFAULT_HIDDEN
    seed: int | None = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("bias_epochs", "uplift_epochs", "mlp_epochs"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.alpha_upper >= self.alpha_lower >= 0:
            raise InvalidArgumentError(
                f"alpha bounds must satisfy alpha_upper >= alpha_lower >= 0, "
                f"got {self.alpha_upper} and {self.alpha_lower}"
            )
        if self.decay < 0:
            raise InvalidArgumentError(f"decay must be >= 0, got {self.decay}")
        if self.embed_dim < 1:
            raise InvalidArgumentError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise InvalidArgumentError(f"Unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["mlp_hidden"] = list(self.mlp_hidden)
        return values

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidArgumentError(f"Unknown training settings: {unknown}")
        values = dict(values)
        if "mlp_hidden" in values:
            values["mlp_hidden"] = tuple(int(width) for width in values["mlp_hidden"])
        return cls(**values)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: str
    alpha: float
    train_loss: float
    validation_loss: float | None = None

    def to_record(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TrainingProgress:
    phase: str
    epoch: int
    total_epochs: int
    record: EpochRecord | None = field(default=None)

    @property
    def progress(self) -> float:
        return (self.epoch / self.total_epochs) * 100 if self.total_epochs > 0 else 0


ProgressCallback = Callable[[TrainingProgress], None]
Samples = Sequence[TrainingSample] | SampleArrays


def alpha_schedule(cfg: TrainConfig, global_step: int) -> float:
    return decayed_alpha(cfg.alpha_upper, cfg.alpha_lower, cfg.decay, global_step)


def total_loss(model: ResponseModelProtocol, batch: SampleArrays, alpha: float) -> float:
    loss, _ = model.loss_and_grads(batch, alpha)
    return loss


class _PhaseTrainer:
    def __init__(
        self,
        model: ResponseModelProtocol,
        phase: str,
        names: Sequence[str],
        epochs: int,
        cfg: TrainConfig,
        train: SampleArrays,
        validation: SampleArrays | None,
        alpha_fn: Callable[[int], float],
        progress_callback: ProgressCallback | None,
    ):
        self._model = model
        self._phase = phase
        self._epochs = epochs
        self._cfg = cfg
        self._train = train
        self._validation = validation if validation is not None and len(validation) else None
        self._alpha_fn = alpha_fn
        self._progress_callback = progress_callback
        self._optimizer = make_optimizer(cfg.optimizer, model.params, names, cfg.learning_rate)
        seed = [cfg.seed, _PHASE_IDS[phase]] if cfg.seed is not None else None
        self._rng = np.random.default_rng(seed)

    def run(self) -> list[EpochRecord]:
        records: list[EpochRecord] = []
        global_step = 0
        count = len(self._train)
        for epoch in range(1, self._epochs + 1):
            alpha = self._alpha_fn(global_step)
            order = self._rng.permutation(count)
            for start in range(0, count, self._cfg.batch_size):
                alpha = self._alpha_fn(global_step)
                batch = self._train.take(order[start : start + self._cfg.batch_size])
                _, grads = self._model.loss_and_grads(batch, alpha)
                self._optimizer.step(grads)
                global_step += 1

            record = EpochRecord(
                epoch=epoch,
                phase=self._phase,
                alpha=alpha,
                train_loss=total_loss(self._model, self._train, alpha),
                validation_loss=(
                    None if self._validation is None else total_loss(self._model, self._validation, alpha)
                ),
            )
            logger.debug("%s epoch %d: alpha=%.4g train=%.6f", self._phase, epoch, alpha, record.train_loss)
            records.append(record)
            if self._progress_callback:
                self._progress_callback(
                    TrainingProgress(phase=self._phase, epoch=epoch, total_epochs=self._epochs, record=record)
                )
        return records


def _as_arrays(samples: Samples | None) -> SampleArrays | None:
    if samples is None or isinstance(samples, SampleArrays):
        return samples
    return to_arrays(samples)


def _lowest_level(model: DipnModel, arrays: SampleArrays | None) -> SampleArrays | None:
    if arrays is None:
        return None
    mask = model.grid.level_indices(arrays.incentives) == 0
    return arrays.take(np.flatnonzero(mask))


def train_bias_phase(
    model: DipnModel,
    samples: Samples,
    cfg: TrainConfig,
    validation: Samples | None = None,
    progress_callback: ProgressCallback | None = None,
) -> DipnModel:
    """BLP: fit the bias net on samples in the lowest grid level; the uplift net stays untouched."""
    model = model.copy()
    train = _lowest_level(model, _as_arrays(samples))
    if train is None or len(train) == 0:
        low, high = model.grid.levels[0], model.grid.levels[1]
        raise EmptyPhaseDataError(
            f"No training samples have an incentive in the lowest grid level [{low:g}, {high:g}); "
            "coarsen the grid so its first bin covers observed incentives"
        )
    _PhaseTrainer(
        model,
        PHASE_BIAS,
        BIAS_PARAM_NAMES,
        cfg.bias_epochs,
        cfg,
        train,
        _lowest_level(model, _as_arrays(validation)),
        alpha_fn=lambda _: 0.0,
        progress_callback=progress_callback,
    ).run()
    return model


def train_uplift_phase(
    model: DipnModel,
    samples: Samples,
    cfg: TrainConfig,
    validation: Samples | None = None,
    progress_callback: ProgressCallback | None = None,
) -> DipnModel:
    """ULP: fit the uplift net on all samples with the bias net frozen; alpha decays per mini-batch."""
    model = model.copy()
    train = _as_arrays(samples)
    if train is None or len(train) == 0:
        raise EmptyPhaseDataError("The uplift phase needs at least one training sample")
    _PhaseTrainer(
        model,
        PHASE_UPLIFT,
        UPLIFT_PARAM_NAMES,
        cfg.uplift_epochs,
        cfg,
        train,
        _as_arrays(validation),
        alpha_fn=lambda step: alpha_schedule(cfg, step),
        progress_callback=progress_callback,
    ).run()
    return model


def train_dipn(
    model: DipnModel,
    samples: Samples,
    cfg: TrainConfig,
    validation: Samples | None = None,
    progress_callback: ProgressCallback | None = None,
) -> DipnModel:
    train = _as_arrays(samples)
    assert train is not None
    lowest = _lowest_level(model, train)
    model = model.copy()
    if lowest is not None and len(lowest) and float(np.sum(lowest.weights)) > 0:
        base_rate = float(np.average(lowest.labels, weights=lowest.weights))
        base_rate = min(max(base_rate, PROB_CLAMP), 1.0 - PROB_CLAMP)
        model.params["global_bias"][0] = np.log(base_rate / (1.0 - base_rate))
    model = train_bias_phase(model, train, cfg, validation, progress_callback)
    logger.info("Bias phase finished, starting uplift phase")
    return train_uplift_phase(model, train, cfg, validation, progress_callback)


def train_mlp(
    model: MlpModel,
    samples: Samples,
    cfg: TrainConfig,
    validation: Samples | None = None,
    progress_callback: ProgressCallback | None = None,
) -> MlpModel:
    model = model.copy()
    train = _as_arrays(samples)
    if train is None or len(train) == 0:
        raise EmptyPhaseDataError("MLP training needs at least one training sample")
    _PhaseTrainer(
        model,
        PHASE_MLP,
        tuple(model.params),
        cfg.mlp_epochs,
        cfg,
        train,
        _as_arrays(validation),
        alpha_fn=lambda _: 0.0,
        progress_callback=progress_callback,
    ).run()
    return model


def new_model(kind: str, grid: IncentiveGrid, vocab_sizes: Sequence[int], cfg: TrainConfig) -> DipnModel | MlpModel:
    if kind == DipnModel.kind:
        return DipnModel.initialize(grid, vocab_sizes, embed_dim=cfg.embed_dim, seed=cfg.seed)
    if kind == MlpModel.kind:
        return MlpModel.initialize(grid, vocab_sizes, embed_dim=cfg.embed_dim, hidden=cfg.mlp_hidden, seed=cfg.seed)
    raise InvalidArgumentError(f"Unknown model kind {kind!r}; expected 'dipn' or 'mlp'")


def train_model(
    model: DipnModel | MlpModel,
    samples: Samples,
    cfg: TrainConfig,
    validation: Samples | None = None,
    progress_callback: ProgressCallback | None = None,
) -> DipnModel | MlpModel:
    if isinstance(model, DipnModel):
        return train_dipn(model, samples, cfg, validation, progress_callback)
    return train_mlp(model, samples, cfg, validation, progress_callback)
