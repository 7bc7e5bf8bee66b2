import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from logzero import logger

from hsat.attacks.attacks import hier_attack
from hsat.attacks.config import AttackConfig
from hsat.contrastive.losses import LossConfig, hierarchical_loss, parse_levels
from hsat.contrastive.positives import LEVEL_ORDER, Level, build_positive_sets, positive_set_size
from hsat.exceptions import ConfigurationError, NumericError
from hsat.hierdata.augment import AugmentationPolicy, strength_schedule
from hsat.hierdata.dataset import HierDataset
from hsat.hierdata.sampler import sample_batch
from hsat.model.checkpoint import save_checkpoint
from hsat.model.encoder import Encoder, ModelParams
from hsat.tensor_engine.tensor import Tape
from hsat.trainer.optimizer import AdamWState, adamw_step
from hsat.trainer.schedule import epsilon_schedule, lr_schedule

TRAIN_LOG = 'train_log.jsonl'

# keys of the train config section; attack, loss and augment live in their own sections
_SCALAR_FIELDS = ('iterations', 'n', 'n_s', 'n_p', 'n_a', 'lr', 'weight_decay', 'warmup_frac', 'eps_warmup_frac',
                  'aug_ramp_frac', 'max_levels', 'adversarial', 'seed', 'checkpoint_every', 'log_every', 'betas',
                  'adam_eps')


class TrainConfigError(ConfigurationError):
    pass


class NonFiniteLossError(NumericError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def _default_attack() -> AttackConfig:
    return AttackConfig(steps=5, eps=8 / 255)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    n: int = 2
    n_s: int = 2
    n_p: int = 2
    n_a: int = 2
    lr: float = 1e-3
    weight_decay: float = 1e-4
    warmup_frac: float = 0.10
    eps_warmup_frac: float = 0.125
    aug_ramp_frac: float = 0.25
    attack: AttackConfig = field(default_factory=_default_attack)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    max_levels: Optional[Tuple[Level, ...]] = None
    adversarial: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 50
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.max_levels is not None:
            object.__setattr__(self, 'max_levels', parse_levels(self.max_levels))
        object.__setattr__(self, 'betas', tuple(float(b) for b in self.betas))

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return self.n, self.n_s, self.n_p, self.n_a

    def max_loss(self) -> LossConfig:
        """Loss maximized by the attack; the minimization loss unless max_levels narrows it."""
        return self.loss if self.max_levels is None else self.loss.with_levels(self.max_levels)

    def validate(self) -> 'TrainConfig':
        if self.iterations < 1:
            raise TrainConfigError(f'train.iterations: must be >= 1, got {self.iterations}')
        for key in ('n', 'n_s', 'n_p', 'n_a'):
            if getattr(self, key) < 1:
                raise TrainConfigError(f'train.{key}: must be >= 1, got {getattr(self, key)}')
        for key in ('warmup_frac', 'eps_warmup_frac', 'aug_ramp_frac'):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise TrainConfigError(f'train.{key}: must lie in [0, 1], got {getattr(self, key)}')
        if self.lr < 0 or self.weight_decay < 0:
            raise TrainConfigError('train.lr and train.weight_decay must be >= 0')
        if self.checkpoint_every < 0 or self.log_every < 1:
            raise TrainConfigError('train.checkpoint_every must be >= 0 and train.log_every >= 1')
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise TrainConfigError(f'train.betas: expected two values in [0, 1), got {self.betas}')
        if self.max_levels is not None and not self.max_levels:
            raise TrainConfigError('train.max_levels: must be null or name at least one level')
        self.attack.validate()
        self.loss.validate()
        self.max_loss().validate()
        self.augment.validate()
        self._check_positive_sets()
        return self

    def _check_positive_sets(self):
        losses = [('loss.levels', self.loss)]
        if self.adversarial:
            losses.append(('train.max_levels', self.max_loss()))
        for key, loss in losses:
            for level in loss.active_levels():
                if positive_set_size(level, self.dims, nested=loss.nested) < 1:
                    raise TrainConfigError(
                        f'{key}: level "{level.value}" has no positives with train.n_s={self.n_s}, '
                        f'train.n_p={self.n_p}, train.n_a={self.n_a} and loss.nested={loss.nested}')

    def to_json(self) -> dict:
        values = {key: getattr(self, key) for key in _SCALAR_FIELDS}
        values['max_levels'] = None if self.max_levels is None else [lv.value for lv in self.max_levels]
        values['betas'] = list(self.betas)
        return values

    @staticmethod
    def from_json(property_values: dict, *, attack: Optional[AttackConfig] = None, loss: Optional[LossConfig] = None,
                  augment: Optional[AugmentationPolicy] = None) -> 'TrainConfig':
        extras = {}
        if attack is not None:
            extras['attack'] = attack
        if loss is not None:
            extras['loss'] = loss
        if augment is not None:
            extras['augment'] = augment
        try:
            return TrainConfig(**property_values, **extras).validate()
        except TypeError as e:
            raise TrainConfigError(f'train: {e}')


@dataclass
class TrainResult:
    params: ModelParams
    log: List[dict]
    checkpoints: List[str]


def _log_record(t: int, lr: float, eps: float, strength: float, losses: Dict[Level, float], wall_ms: float) -> dict:
    record = {'iteration': t, 'lr': lr, 'eps': eps}
    for level in LEVEL_ORDER:
        record[f'loss_{level.value}'] = losses.get(level)
    record['strength'] = strength
    record['wall_ms'] = wall_ms
    return record


def train(dataset: HierDataset, params: ModelParams, cfg: TrainConfig, out_dir: Optional[str] = None) -> TrainResult:
    """Min-max loop: craft a hierarchy-wise adversarial batch with theta frozen, then one AdamW step on it."""
    cfg.validate()
    total = cfg.iterations
    rng = np.random.default_rng([cfg.seed, 0])
    state = AdamWState(params, cfg.betas, cfg.adam_eps)
    max_loss = cfg.max_loss()
    log, checkpoints = [], []
    log_fp = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fp = open(os.path.join(out_dir, TRAIN_LOG), 'a')
    logger.info(f'Training {params.config.architecture.value} encoder for {total} iterations, '
                f'batch {cfg.dims}, adversarial={cfg.adversarial}, levels={[lv.value for lv in cfg.loss.levels]}')

    started = time.perf_counter()
    try:
        for t in range(total):
            strength = strength_schedule(t, total, cfg.aug_ramp_frac)
            batch, x = sample_batch(dataset, *cfg.dims, rng, policy=cfg.augment, strength=strength)
            lr = lr_schedule(t, total, cfg.lr, cfg.warmup_frac)
            eps = epsilon_schedule(t, total, cfg.attack.eps, cfg.eps_warmup_frac)
            if cfg.adversarial:
                atk = dataclasses.replace(cfg.attack, eps=eps)
                x = hier_attack(params, x, batch, max_loss, atk, np.random.default_rng([cfg.seed, 1, t]),
                                record_final=False).x_adv

            sets = build_positive_sets(batch, nested=cfg.loss.nested)
            encoder = Encoder(params, trainable=True)
            per_level = {}
            with Tape() as tape:
                loss = hierarchical_loss(encoder(x), sets, cfg.loss, per_level=per_level)
            losses = {level: value.item() for level, value in per_level.items()}
            if not math.isfinite(loss.item()):
                snapshot = {'iteration': t, 'lr': lr, 'eps': eps,
                            'losses': {level.value: value for level, value in losses.items()}}
                raise NonFiniteLossError(f'Non-finite training loss at iteration {t}: {snapshot}', snapshot)
            tape.backward(loss)
            params = adamw_step(params, encoder.gradients(), state, lr, cfg.weight_decay)

            if t % cfg.log_every == 0 or t == total - 1:
                record = _log_record(t, lr, eps, strength, losses, (time.perf_counter() - started) * 1000.0)
                log.append(record)
                if log_fp is not None:
                    log_fp.write(json.dumps(record) + '\n')
                    log_fp.flush()
                logger.info(f'iter {t}: loss {loss.item():.4f} lr {lr:.2e} eps {eps:.4f} strength {strength:.2f}')

            if out_dir is not None and cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0 and t + 1 < total:
                path = os.path.join(out_dir, f'ckpt_{t + 1:06d}.ckpt')
                save_checkpoint(params, path)
                checkpoints.append(path)
    finally:
        if log_fp is not None:
            log_fp.close()

    if out_dir is not None:
        path = os.path.join(out_dir, 'final.ckpt')
        save_checkpoint(params, path)
        checkpoints.append(path)
    return TrainResult(params, log, checkpoints)
