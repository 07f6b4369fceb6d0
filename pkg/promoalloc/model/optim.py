from typing import Iterable, Literal

import numpy as np

from ..errors import InvalidArgumentError

OptimizerName = Literal["sgd", "momentum", "adam"]


class Optimizer:
    """Updates a subset of named parameter arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], names: Iterable[str], learning_rate: float):
        if learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {learning_rate}")
        self.params = params
        self.names = tuple(names)
        missing = [name for name in self.names if name not in params]
        if missing:
            raise InvalidArgumentError(f"Unknown parameters for optimizer: {missing}")
        self.learning_rate = learning_rate
        self.steps = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.steps += 1
        for name in self.names:
            self._update(name, grads[name])

    def _update(self, name: str, grad: np.ndarray) -> None:
        raise NotImplementedError


class SgdOptimizer(Optimizer):
    def _update(self, name: str, grad: np.ndarray) -> None:
        self.params[name] -= self.learning_rate * grad


class MomentumOptimizer(Optimizer):
    def __init__(self, params, names, learning_rate: float, momentum: float = 0.9):
        super().__init__(params, names, learning_rate)
        self.momentum = momentum
        self._velocity = {name: np.zeros_like(params[name]) for name in self.names}

    def _update(self, name: str, grad: np.ndarray) -> None:
        velocity = self._velocity[name]
        velocity *= self.momentum
        velocity -= self.learning_rate * grad
        self.params[name] += velocity


class AdamOptimizer(Optimizer):
    def __init__(
        self,
        params,
        names,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(params, names, learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._first = {name: np.zeros_like(params[name]) for name in self.names}
        self._second = {name: np.zeros_like(params[name]) for name in self.names}

    def _update(self, name: str, grad: np.ndarray) -> None:
        first = self._first[name]
        second = self._second[name]
        first *= self.beta1
        first += (1.0 - self.beta1) * grad
        second *= self.beta2
        second += (1.0 - self.beta2) * grad**2
        first_hat = first / (1.0 - self.beta1**self.steps)
        second_hat = second / (1.0 - self.beta2**self.steps)
        self.params[name] -= self.learning_rate * first_hat / (np.sqrt(second_hat) + self.eps)


_OPTIMIZERS: dict[str, type[Optimizer]] = {
    "sgd": SgdOptimizer,
    "momentum": MomentumOptimizer,
    "adam": AdamOptimizer,
}


def make_optimizer(name: str, params: dict[str, np.ndarray], names: Iterable[str], learning_rate: float) -> Optimizer:
    optimizer_type = _OPTIMIZERS.get(name)
    if optimizer_type is None:
        raise InvalidArgumentError(f"Unknown optimizer {name!r}; choose one of {sorted(_OPTIMIZERS)}")
    return optimizer_type(params, names, learning_rate)
