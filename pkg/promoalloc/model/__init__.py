from .dipn import BIAS_PARAM_NAMES, UPLIFT_PARAM_NAMES, DipnModel
from .grid import IncentiveGrid, isotonic_embed
from .io import load_model, model_checksum, save_model
from .losses import log_loss, smoothness_loss
from .mlp import MlpModel
from .protocol import ResponseModelProtocol
from .training import (
    EpochRecord,
    ProgressCallback,
    TrainConfig,
    TrainingProgress,
    alpha_schedule,
    new_model,
    total_loss,
    train_bias_phase,
    train_dipn,
    train_mlp,
    train_model,
    train_uplift_phase,
)
