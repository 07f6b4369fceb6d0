import hashlib
import json
from os import PathLike
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import FormatVersionError
from ..records import read_json, write_json
from .dipn import DipnModel
from .grid import IncentiveGrid
from .mlp import MlpModel
from .training import TrainConfig

MODEL_KIND = "model"
_MODEL_TYPES: dict[str, type[DipnModel] | type[MlpModel]] = {
    DipnModel.kind: DipnModel,
    MlpModel.kind: MlpModel,
}


def _encode_params(params: dict[str, np.ndarray]) -> dict[str, dict[str, Any]]:
    # Row-major flat data; float repr round-trips exactly through JSON.
    return {
        name: {"shape": list(value.shape), "data": [float(x) for x in value.ravel(order="C")]}
        for name, value in sorted(params.items())
    }


def save_model(path: PathLike, model: DipnModel | MlpModel, cfg: TrainConfig | None = None) -> Path:
    return write_json(
        path,
        MODEL_KIND,
        {
            "model_kind": model.kind,
            "grid": list(model.grid.levels),
            "vocab_sizes": list(model.vocab_sizes),
            "params": _encode_params(model.params),
            "train_config": cfg.to_dict() if cfg is not None else None,
            "checksum": model_checksum(model),
        },
    )


def load_model(path: PathLike) -> tuple[DipnModel | MlpModel, TrainConfig | None]:
    document = read_json(path, MODEL_KIND)
    model_type = _MODEL_TYPES.get(document.get("model_kind", ""))
    if model_type is None:
        raise FormatVersionError(f"{path}: unknown model kind {document.get('model_kind')!r}")
    try:
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in document["params"].items()
        }
        grid = IncentiveGrid.from_levels(document["grid"])
        model = model_type(grid, document["vocab_sizes"], params)
    except (KeyError, ValueError, TypeError) as e:
        raise FormatVersionError(f"{Path(path)}: malformed model file: {e}") from e
    cfg_values = document.get("train_config")
    cfg = TrainConfig.from_dict(cfg_values) if cfg_values else None
    return model, cfg


def model_checksum(model: DipnModel | MlpModel) -> str:
    digest = hashlib.sha256()
    digest.update(
        json.dumps(
            {"kind": model.kind, "grid": list(model.grid.levels), "vocab_sizes": list(model.vocab_sizes)},
            sort_keys=True,
        ).encode("utf-8")
    )
    for name in sorted(model.params):
        value = np.ascontiguousarray(model.params[name], dtype=np.float64)
        digest.update(name.encode("utf-8"))
        digest.update(repr(value.shape).encode("utf-8"))
        digest.update(value.tobytes())
    return digest.hexdigest()
