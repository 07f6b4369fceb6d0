from typing import Sequence

import numpy as np
from scipy.special import expit

from ..dataset import SampleArrays
from .base import EmbeddingModel
from .grid import IncentiveGrid
from .losses import PROB_CLAMP, log_loss

DEFAULT_HIDDEN = (16, 16)


class MlpModel(EmbeddingModel):
    """Feed-forward baseline: summed embeddings plus a one-hot incentive level, ReLU layers, one logit.

    No shape constraint; `alpha` is accepted by `loss_and_grads` for protocol
    compatibility and ignored.
    """

    kind = "mlp"

    @classmethod
    def initialize(
        cls,
        grid: IncentiveGrid,
        vocab_sizes: Sequence[int],
        embed_dim: int = 8,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        seed: int | None = None,
    ) -> "MlpModel":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for f, size in enumerate(vocab_sizes):
            params[f"embed_{f}"] = rng.normal(0.0, 0.1, size=(size, embed_dim))
        width = embed_dim + grid.size
        for layer, out in enumerate(hidden):
            params[f"hidden_{layer}_w"] = rng.normal(0.0, np.sqrt(2.0 / width), size=(out, width))
            params[f"hidden_{layer}_b"] = np.zeros(out)
            width = out
        params["out_w"] = rng.normal(0.0, 1.0 / np.sqrt(width), size=width)
        params["out_b"] = np.zeros(1)
        return cls(grid, vocab_sizes, params)

    @property
    def layer_count(self) -> int:
        return sum(1 for name in self.params if name.startswith("hidden_") and name.endswith("_w"))

    @property
    def embed_dim(self) -> int:
        return int(self.params["embed_0"].shape[1])

    def _inputs(self, features: np.ndarray, levels: np.ndarray) -> np.ndarray:
        onehot = np.zeros((features.shape[0], self.grid.size))
        onehot[np.arange(features.shape[0]), levels] = 1.0
        return np.concatenate((self._embed("embed", features), onehot), axis=1)

    def _forward(self, inputs: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        activations = [inputs]
        pre_activations = []
        current = inputs
        for layer in range(self.layer_count):
            pre = current @ self.params[f"hidden_{layer}_w"].T + self.params[f"hidden_{layer}_b"]
            current = np.maximum(pre, 0.0)
            pre_activations.append(pre)
            activations.append(current)
        logit = current @ self.params["out_w"] + self.params["out_b"][0]
        return activations, pre_activations, logit

    def predict_curves(self, features: np.ndarray) -> np.ndarray:
        rows = self.check_vocabulary(features)
        curves = np.empty((rows.shape[0], self.grid.size))
        for j in range(self.grid.size):
            levels = np.full(rows.shape[0], j, dtype=np.int64)
            curves[:, j] = expit(self._forward(self._inputs(rows, levels))[2])
        return curves

    def loss_and_grads(self, batch: SampleArrays, alpha: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
        features = self.check_vocabulary(batch.features)
        m = features.shape[0]
        levels = self.grid.level_indices(batch.incentives)
        activations, pre_activations, logit = self._forward(self._inputs(features, levels))
        prob = expit(logit)
        loss = float(log_loss(prob, batch.labels, batch.weights).sum() / m)

        inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
        d_logit = batch.weights * (prob - batch.labels) * inside / m

        grads: dict[str, np.ndarray] = {
            "out_b": np.array([d_logit.sum()]),
            "out_w": activations[-1].T @ d_logit,
        }
        d_current = d_logit[:, None] * self.params["out_w"][None, :]
        for layer in reversed(range(self.layer_count)):
            d_pre = d_current * (pre_activations[layer] > 0)
            grads[f"hidden_{layer}_w"] = d_pre.T @ activations[layer]
            grads[f"hidden_{layer}_b"] = d_pre.sum(axis=0)
            d_current = d_pre @ self.params[f"hidden_{layer}_w"]
        # The one-hot level columns carry no parameters.
        self._embed_grads("embed", features, d_current[:, : self.embed_dim], grads)
        return loss, grads

    def loss(self, batch: SampleArrays, alpha: float = 0.0) -> float:
        return self.loss_and_grads(batch, alpha)[0]
