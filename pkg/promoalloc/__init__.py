from __future__ import annotations

from typing import TYPE_CHECKING, Any

from . import errors

if TYPE_CHECKING:
    from .allocator import AllocationPlan, DualSolution, ResponseMatrix, build_matrix, solve_budget
    from .config import RunConfig, load_config
    from .model import DipnModel, IncentiveGrid, MlpModel, TrainConfig, TrainingProgress, train_model
    from .synthdata import SyntheticPopulation, gen_population

__all__ = [
    "errors",
    "AllocationPlan",
    "DipnModel",
    "DualSolution",
    "IncentiveGrid",
    "MlpModel",
    "ResponseMatrix",
    "RunConfig",
    "SyntheticPopulation",
    "TrainConfig",
    "TrainingProgress",
    "build_matrix",
    "gen_population",
    "load_config",
    "solve_budget",
    "train_model",
]

_LAZY_EXPORTS: dict[str, str] = {
    "AllocationPlan": ".allocator",
    "DualSolution": ".allocator",
    "ResponseMatrix": ".allocator",
    "build_matrix": ".allocator",
    "solve_budget": ".allocator",
    "RunConfig": ".config",
    "load_config": ".config",
    "DipnModel": ".model",
    "IncentiveGrid": ".model",
    "MlpModel": ".model",
    "TrainConfig": ".model",
    "TrainingProgress": ".model",
    "train_model": ".model",
    "SyntheticPopulation": ".synthdata",
    "gen_population": ".synthdata",
}


def __getattr__(name: str) -> Any:
    module_name = _LAZY_EXPORTS.get(name)
    if module_name is not None:
        from importlib import import_module

        return getattr(import_module(module_name, __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
