from collections import OrderedDict
from typing import Dict, Mapping, Tuple

import numpy as np

from hsat.model.encoder import ModelParams


class AdamWState:
    """First and second moment buffers per parameter plus the shared step counter."""

    def __init__(self, params: ModelParams, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.betas = tuple(betas)
        self.eps = eps
        self.step = 0
        self.exp_avg: Dict[str, np.ndarray] = OrderedDict((name, np.zeros_like(a)) for name, a in params.items())
        self.exp_avg_sq: Dict[str, np.ndarray] = OrderedDict((name, np.zeros_like(a)) for name, a in params.items())


def adamw_step(params: ModelParams, grads: Mapping[str, np.ndarray], state: AdamWState, lr: float,
               weight_decay: float) -> ModelParams:
    """One AdamW update. Decay is applied to theta directly, independent of the moments.

    Returns the new parameters; ``state`` is advanced in place.
    """
    beta1, beta2 = state.betas
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    updated = OrderedDict()
    for name, theta in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != theta.shape:
            raise ValueError(f'adamw_step: gradient for {name} has shape {grad.shape}, parameter {theta.shape}')
        theta = theta * (1.0 - lr * weight_decay)
        state.exp_avg[name] = beta1 * state.exp_avg[name] + (1.0 - beta1) * grad
        state.exp_avg_sq[name] = beta2 * state.exp_avg_sq[name] + (1.0 - beta2) * grad * grad
        denom = np.sqrt(state.exp_avg_sq[name] / bias2) + state.eps
        updated[name] = theta - lr * (state.exp_avg[name] / bias1) / denom
    return params.replace(updated)
