"""Signed-gradient update rules. np.sign(0) == 0, so a zero gradient leaves delta where it is."""
from typing import Callable, Dict, Optional

import numpy as np

from hsat.attacks.config import AttackConfig, UpdateRule


class StepState:
    def __init__(self):
        self.velocity: Optional[np.ndarray] = None


def pgd_step(grad: np.ndarray, state: StepState, atk: AttackConfig) -> np.ndarray:
    return atk.step_size * np.sign(grad)


def bim_step(grad: np.ndarray, state: StepState, atk: AttackConfig) -> np.ndarray:
    return atk.step_size * np.sign(grad)


def mifgsm_step(grad: np.ndarray, state: StepState, atk: AttackConfig) -> np.ndarray:
    axes = tuple(range(1, grad.ndim))
    l1 = np.sum(np.abs(grad), axis=axes, keepdims=True)
    normalized = grad / np.where(l1 > 0, l1, 1.0)
    if state.velocity is None:
        state.velocity = np.zeros_like(grad)
    state.velocity = atk.momentum * state.velocity + normalized
    return atk.step_size * np.sign(state.velocity)


STEP_RULES: Dict[UpdateRule, Callable[[np.ndarray, StepState, AttackConfig], np.ndarray]] = {
    UpdateRule.PGD: pgd_step,
    UpdateRule.BIM: bim_step,
    UpdateRule.MIFGSM: mifgsm_step,
}


def project(x: np.ndarray, delta: np.ndarray, eps: float) -> np.ndarray:
    """l-inf clamp, then pixel-box clamp; both hold exactly afterwards."""
    delta = np.clip(delta, -eps, eps)
    return np.clip(delta, -x, 1.0 - x)


def initial_delta(x: np.ndarray, atk: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform start in the eps-ball for PGD with random_start, zero otherwise. Only the former uses rng."""
    if atk.rule == UpdateRule.PGD and atk.random_start and atk.eps > 0:
        return project(x, rng.uniform(-atk.eps, atk.eps, size=x.shape), atk.eps)
    return np.zeros_like(x)
