from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..dataset import SampleArrays
from .base import FEATURE_COUNT, EmbeddingModel
from .grid import IncentiveGrid
from .losses import PROB_CLAMP, log_loss, smoothness_loss, smoothness_loss_grad

LEAKY_SLOPE = 0.01

BIAS_PARAM_NAMES: tuple[str, ...] = (
    *(f"bias_embed_{f}" for f in range(FEATURE_COUNT)),
    "bias_hidden_w",
    "bias_hidden_b",
    "bias_out_w",
    "global_bias",
)
UPLIFT_PARAM_NAMES: tuple[str, ...] = (
    *(f"uplift_embed_{f}" for f in range(FEATURE_COUNT)),
    "uplift_w",
    "uplift_bias_w",
    "uplift_prev_w",
    "uplift_b",
)


@dataclass
class _Forward:
    bias_h: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    bias_logit: np.ndarray
    bias_prob: np.ndarray
    uplift_h: np.ndarray
    uplift_pre: np.ndarray
    uplift: np.ndarray


class DipnModel(EmbeddingModel):
    """Bias net plus uplift net over an isotonic embedding of the incentive.

    The bias net maps summed feature embeddings through a leaky-ReLU hidden
    layer to the logit at the lowest grid level. The uplift net produces one
    nonnegative weight per remaining level; weight j sees the summed uplift
    embeddings, the bias-net probability and weight j-1. The logit at level k
    is the bias logit plus the cumulative sum of the first k uplift weights.
    """

    kind = "dipn"

    @classmethod
    def initialize(
        cls,
        grid: IncentiveGrid,
        vocab_sizes: Sequence[int],
        embed_dim: int = 8,
        hidden_dim: int | None = None,
        seed: int | None = None,
    ) -> "DipnModel":
        rng = np.random.default_rng(seed)
        hidden = hidden_dim or embed_dim
        uplift_count = grid.size - 1
        params: dict[str, np.ndarray] = {}
        for f, size in enumerate(vocab_sizes):
            params[f"bias_embed_{f}"] = rng.normal(0.0, 0.1, size=(size, embed_dim))
        params["bias_hidden_w"] = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(hidden, embed_dim))
        params["bias_hidden_b"] = np.zeros(hidden)
        params["bias_out_w"] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden)
        params["global_bias"] = np.zeros(1)
        for f, size in enumerate(vocab_sizes):
            params[f"uplift_embed_{f}"] = rng.normal(0.0, 0.1, size=(size, embed_dim))
        params["uplift_w"] = rng.normal(0.0, 0.1, size=(uplift_count, embed_dim))
        params["uplift_bias_w"] = np.zeros(uplift_count)
        params["uplift_prev_w"] = np.zeros(uplift_count)
        # Positive start keeps every ReLU unit alive at the beginning of ULP.
        params["uplift_b"] = np.full(uplift_count, 0.1)
        return cls(grid, vocab_sizes, params)

    def _forward(self, features: np.ndarray) -> _Forward:
        p = self.params
        bias_h = self._embed("bias_embed", features)
        hidden_pre = bias_h @ p["bias_hidden_w"].T + p["bias_hidden_b"]
        hidden = np.where(hidden_pre > 0, hidden_pre, LEAKY_SLOPE * hidden_pre)
        bias_logit = hidden @ p["bias_out_w"] + p["global_bias"][0]
        bias_prob = expit(bias_logit)

        uplift_h = self._embed("uplift_embed", features)
        base = uplift_h @ p["uplift_w"].T + bias_prob[:, None] * p["uplift_bias_w"] + p["uplift_b"]
        uplift_pre = np.empty_like(base)
        uplift = np.empty_like(base)
        previous = np.zeros(features.shape[0])
        for j in range(base.shape[1]):
            uplift_pre[:, j] = base[:, j] + p["uplift_prev_w"][j] * previous
            uplift[:, j] = np.maximum(uplift_pre[:, j], 0.0)
            previous = uplift[:, j]
        return _Forward(bias_h, hidden_pre, hidden, bias_logit, bias_prob, uplift_h, uplift_pre, uplift)

    def curve_logits(self, features: np.ndarray) -> np.ndarray:
        rows = self.check_vocabulary(features)
        fw = self._forward(rows)
        cumulative = np.concatenate((np.zeros((rows.shape[0], 1)), np.cumsum(fw.uplift, axis=1)), axis=1)
        return fw.bias_logit[:, None] + cumulative

    def predict_curves(self, features: np.ndarray) -> np.ndarray:
        return expit(self.curve_logits(features))

    def uplift_weights(self, features: np.ndarray) -> np.ndarray:
        return self._forward(self.check_vocabulary(features)).uplift

    def bias_logits(self, features: np.ndarray) -> np.ndarray:
        return self._forward(self.check_vocabulary(features)).bias_logit

    def loss_and_grads(self, batch: SampleArrays, alpha: float) -> tuple[float, dict[str, np.ndarray]]:
        """Mean weighted log loss plus alpha times mean smoothness loss, with gradients."""
        p = self.params
        features = self.check_vocabulary(batch.features)
        m = features.shape[0]
        d = self.grid.size
        fw = self._forward(features)
        levels = self.grid.level_indices(batch.incentives)
        embed = (levels[:, None] >= np.arange(1, d)[None, :]).astype(np.float64)

        logit = fw.bias_logit + (fw.uplift * embed).sum(axis=1)
        prob = expit(logit)
        data_loss = log_loss(prob, batch.labels, batch.weights)
        smooth = smoothness_loss(fw.uplift, num_levels=d) if d > 2 else np.zeros(m)
        loss = float((data_loss.sum() + alpha * np.sum(smooth)) / m)

        inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
        d_logit = batch.weights * (prob - batch.labels) * inside / m
        d_uplift = d_logit[:, None] * embed + (alpha / m) * smoothness_loss_grad(fw.uplift, num_levels=d)

        grads: dict[str, np.ndarray] = {}
        d_pre = np.zeros_like(fw.uplift_pre)
        d_prev_w = np.zeros_like(p["uplift_prev_w"])
        carry = np.zeros(m)
        for j in reversed(range(fw.uplift.shape[1])):
            d_s = (d_uplift[:, j] + carry) * (fw.uplift_pre[:, j] > 0)
            d_pre[:, j] = d_s
            if j > 0:
                d_prev_w[j] = d_s @ fw.uplift[:, j - 1]
            carry = d_s * p["uplift_prev_w"][j]

        grads["uplift_w"] = d_pre.T @ fw.uplift_h
        grads["uplift_b"] = d_pre.sum(axis=0)
        grads["uplift_bias_w"] = (d_pre * fw.bias_prob[:, None]).sum(axis=0)
        grads["uplift_prev_w"] = d_prev_w
        self._embed_grads("uplift_embed", features, d_pre @ p["uplift_w"], grads)

        d_bias_prob = d_pre @ p["uplift_bias_w"]
        d_bias_logit = d_logit + d_bias_prob * fw.bias_prob * (1.0 - fw.bias_prob)
        grads["global_bias"] = np.array([d_bias_logit.sum()])
        grads["bias_out_w"] = fw.hidden.T @ d_bias_logit
        d_hidden_pre = (d_bias_logit[:, None] * p["bias_out_w"][None, :]) * np.where(
            fw.hidden_pre > 0, 1.0, LEAKY_SLOPE
        )
        grads["bias_hidden_w"] = d_hidden_pre.T @ fw.bias_h
        grads["bias_hidden_b"] = d_hidden_pre.sum(axis=0)
        self._embed_grads("bias_embed", features, d_hidden_pre @ p["bias_hidden_w"], grads)
        return loss, grads

    def loss(self, batch: SampleArrays, alpha: float) -> float:
        return self.loss_and_grads(batch, alpha)[0]
