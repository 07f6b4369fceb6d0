import numpy as np

PROB_CLAMP = 1e-7
SMOOTHNESS_EPS = 1e-6


def clamp_probability(p: np.ndarray | float) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def log_loss(p: np.ndarray | float, y: np.ndarray | float, weight: np.ndarray | float = 1.0) -> np.ndarray:
    """Weighted binary cross-entropy on clamped probabilities, elementwise."""
    pc = clamp_probability(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return np.asarray(weight, dtype=np.float64) * (-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc))


def smoothness_loss(w: np.ndarray, num_levels: int | None = None) -> np.ndarray | float:
    """(1/D) * sum_j (w_{j+1} - w_j)^2 / (w_{j+1} w_j + eps) over the last axis.

    `num_levels` is the D normalizer; it defaults to the number of weights.
    """
    w = np.asarray(w, dtype=np.float64)
    d = w.shape[-1] if num_levels is None else num_levels
    if w.shape[-1] < 2:
        return np.zeros(w.shape[:-1]) if w.ndim > 1 else 0.0
    left = w[..., :-1]
    right = w[..., 1:]
    terms = (right - left) ** 2 / (right * left + SMOOTHNESS_EPS)
    total = terms.sum(axis=-1) / d
    return total if w.ndim > 1 else float(total)


def smoothness_loss_grad(w: np.ndarray, num_levels: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    d = w.shape[-1] if num_levels is None else num_levels
    grad = np.zeros_like(w)
    if w.shape[-1] < 2:
        return grad
    left = w[..., :-1]
    right = w[..., 1:]
    diff = right - left
    denom = right * left + SMOOTHNESS_EPS
    base = 2.0 * diff / denom
    sq = diff**2 / denom**2
    grad[..., 1:] += base - sq * left
    grad[..., :-1] += -base - sq * right
    return grad / d


def decayed_alpha(alpha_upper: float, alpha_lower: float, decay: float, global_step: int) -> float:
    if global_step < 0:
        raise ValueError(f"global_step must be >= 0, got {global_step}")
    return max(alpha_lower, alpha_upper - decay * global_step)
