from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from logzero import logger

from hsat.attacks.config import AttackConfig, AttackConfigError, Objective
from hsat.attacks.step_rules import STEP_RULES, StepState, initial_delta, project
from hsat.contrastive.losses import LossConfig, hierarchical_loss
from hsat.contrastive.positives import build_positive_sets
from hsat.hierdata.sampler import BatchIndex
from hsat.model.encoder import Encoder, ModelParams
from hsat.tensor_engine import ops
from hsat.tensor_engine.gradients import value_and_grad
from hsat.tensor_engine.tensor import Tensor, no_grad


@dataclass(frozen=True)
class AttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    objective_trace: Tuple[float, ...]


def run_attack(objective: Callable[[Tensor], Tensor], x: np.ndarray, atk: AttackConfig,
               rng: np.random.Generator, *, record_final: bool = True) -> AttackResult:
    """Iterative signed ascent on ``objective`` inside the eps-ball around x and the [0, 1] pixel box.

    The trace holds the objective at every iterate the update rule saw, plus the final
    iterate when ``record_final`` is set.
    """
    atk.validate()
    x = np.asarray(x, dtype=np.float64)
    if atk.steps == 0:
        return AttackResult(x.copy(), np.zeros_like(x), ())

    step = STEP_RULES[atk.rule]
    state = StepState()
    delta = initial_delta(x, atk, rng)
    trace = []
    for _ in range(atk.steps):
        value, grad = value_and_grad(objective, np.clip(x + delta, 0.0, 1.0))
        trace.append(value)
        delta = project(x, delta + step(grad, state, atk), atk.eps)
    x_adv = np.clip(x + delta, 0.0, 1.0)
    if record_final:
        with no_grad():
            trace.append(objective(Tensor(x_adv)).item())
    return AttackResult(x_adv, delta, tuple(trace))


def hier_attack(params: ModelParams, x: np.ndarray, batch: BatchIndex, loss_cfg: LossConfig, atk: AttackConfig,
                rng: np.random.Generator, *, record_final: bool = True) -> AttackResult:
    """Maximize the hierarchical contrastive loss over the whole batch, perturbing every element jointly."""
    sets = build_positive_sets(batch, nested=loss_cfg.nested)
    encoder = Encoder(params)
    clean = None
    if atk.contrast_clean_negatives:
        with no_grad():
            clean = encoder(x).detach()

    def objective(x_adv: Tensor) -> Tensor:
        return hierarchical_loss(encoder(x_adv), sets, loss_cfg, contrast=clean)

    return run_attack(objective, x, atk, rng, record_final=record_final)


def clean_features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    with no_grad():
        return ops.l2_normalize(Encoder(params).embed_backbone(x)).numpy()


def cosine_attack(params: ModelParams, x: np.ndarray, atk: AttackConfig, rng: np.random.Generator, *,
                  record_final: bool = True) -> AttackResult:
    """Push backbone features away from their clean values: maximize sum_i 1 - cos(f(x_i), f(x_i + delta_i))."""
    encoder = Encoder(params)
    reference = Tensor(clean_features(params, x))

    def objective(x_adv: Tensor) -> Tensor:
        features = ops.l2_normalize(encoder.embed_backbone(x_adv))
        cosine = ops.sum(ops.mul(features, reference), axis=1)
        return ops.sum(ops.sub(1.0, cosine))

    return run_attack(objective, x, atk, rng, record_final=record_final)


def mean_cosine(params: ModelParams, x: np.ndarray, x_adv: np.ndarray) -> float:
    return float(np.mean(np.sum(clean_features(params, x) * clean_features(params, x_adv), axis=1)))


def attack(params: ModelParams, x: np.ndarray, atk: AttackConfig, rng: np.random.Generator, *,
           batch: Optional[BatchIndex] = None, loss_cfg: Optional[LossConfig] = None) -> AttackResult:
    if atk.objective == Objective.NEG_FEATURE_COSINE:
        return cosine_attack(params, x, atk, rng)
    if batch is None or loss_cfg is None:
        raise AttackConfigError('attack.objective hier_contrastive needs a batch index and a loss config')
    return hier_attack(params, x, batch, loss_cfg, atk, rng)


def craft_adversarial(params: ModelParams, images: np.ndarray, atk: AttackConfig, seed: int,
                      batch_size: int = 64) -> np.ndarray:
    """Feature-cosine attack over a whole image set in chunks; chunk c draws from rng (seed, c)."""
    if atk.objective != Objective.NEG_FEATURE_COSINE:
        atk = atk.replace(objective=Objective.NEG_FEATURE_COSINE.value)
    chunks = []
    for index, start in enumerate(range(0, len(images), batch_size)):
        rng = np.random.default_rng([seed, index])
        chunks.append(cosine_attack(params, images[start:start + batch_size], atk, rng, record_final=False).x_adv)
    logger.debug(f'Crafted {len(images)} adversarial images with {atk.name}')
    return np.concatenate(chunks) if chunks else np.zeros_like(images)
