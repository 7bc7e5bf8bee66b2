"""Hierarchical contrastive losses.

For one level l and unit-norm embeddings z the loss is

    -sum_i 1/|H_l(i)| sum_{h in H_l(i)} log( exp(z_i.z_h / tau) / sum_{p in P(i)} exp(z_i.z_p / tau) )

summed (not averaged) over anchors. The objective used by attacks and training is the
weighted sum of the enabled levels.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from hsat.contrastive.positives import LEVEL_ORDER, Level, PositiveSets
from hsat.exceptions import ConfigurationError, NumericError
from hsat.tensor_engine import ops
from hsat.tensor_engine.tensor import ShapeError, Tensor


class LossConfigError(ConfigurationError):
    pass


class EmptyPositiveSetError(NumericError):
    pass


def parse_levels(levels: Sequence) -> Tuple[Level, ...]:
    try:
        wanted = {level if isinstance(level, Level) else Level(level) for level in levels}
    except ValueError as e:
        raise LossConfigError(f'loss.levels: {e}; expected a subset of {[lv.value for lv in LEVEL_ORDER]}')
    return tuple(level for level in LEVEL_ORDER if level in wanted)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    levels: Tuple[Level, ...] = LEVEL_ORDER
    weights: Dict[Level, float] = field(default_factory=lambda: {level: 1.0 for level in LEVEL_ORDER})
    nested: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'levels', parse_levels(self.levels))
        weights = {level: 1.0 for level in LEVEL_ORDER}
        for key, value in dict(self.weights).items():
            weights[parse_levels([key])[0]] = float(value)
        object.__setattr__(self, 'weights', weights)

    def validate(self) -> 'LossConfig':
        if not self.temperature > 0:
            raise LossConfigError(f'loss.temperature: must be > 0, got {self.temperature}')
        if not self.levels:
            raise LossConfigError('loss.levels: at least one level must be enabled')
        negative = [level.value for level, w in self.weights.items() if w < 0]
        if negative:
            raise LossConfigError(f'loss.weights: must be >= 0, negative for {negative}')
        if not self.active_levels():
            raise LossConfigError(f'loss.weights: every enabled level {[lv.value for lv in self.levels]} has weight 0')
        return self

    def weight(self, level: Level) -> float:
        return self.weights[level]

    def active_levels(self) -> Tuple[Level, ...]:
        return tuple(level for level in self.levels if self.weights[level] > 0)

    def with_levels(self, levels: Sequence) -> 'LossConfig':
        return LossConfig(temperature=self.temperature, levels=parse_levels(levels), weights=self.weights,
                          nested=self.nested)

    def to_json(self) -> dict:
        return {
            'temperature': self.temperature,
            'levels': [level.value for level in self.levels],
            'weights': {level.value: self.weights[level] for level in LEVEL_ORDER},
            'nested': self.nested,
        }

    @staticmethod
    def from_json(property_values: dict) -> 'LossConfig':
        try:
            return LossConfig(**property_values).validate()
        except TypeError as e:
            raise LossConfigError(f'loss: {e}')


def level_loss(z, sets: PositiveSets, level: Level, temperature: float, contrast=None) -> Tensor:
    """Loss of one level; with ``contrast`` given, similarities are taken against those rows instead of z."""
    z = ops.as_tensor(z)
    if z.ndim != 2 or z.shape[0] != sets.size:
        raise ShapeError(f'level_loss: embeddings {z.shape} do not match a batch of {sets.size}')
    mask = sets.mask(level)
    counts = mask.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyPositiveSetError(
            f'level_loss: anchor {int(empty[0])} has an empty {level.value} positive set')

    other = z if contrast is None else ops.as_tensor(contrast)
    sims = ops.scalar_mul(ops.matmul(z, ops.transpose(other)), 1.0 / temperature)
    log_candidates = np.where(sets.candidates, 0.0, -np.inf)
    denominators = ops.logsumexp(ops.add(sims, log_candidates), axis=1)
    positive_weights = mask / counts[:, None]
    numerators = ops.sum(ops.mul(sims, positive_weights))
    return ops.sub(ops.sum(denominators), numerators)


def level_losses(z, sets: PositiveSets, config: LossConfig, contrast=None) -> Dict[Level, Tensor]:
    return {level: level_loss(z, sets, level, config.temperature, contrast) for level in config.active_levels()}


def hierarchical_loss(z, sets: PositiveSets, config: LossConfig, contrast=None,
                      per_level: Optional[Dict[Level, Tensor]] = None) -> Tensor:
    """Weighted sum of the enabled level losses; fills ``per_level`` when a dict is passed."""
    losses = level_losses(z, sets, config.validate(), contrast)
    if per_level is not None:
        per_level.update(losses)
    total = None
    for level, loss in losses.items():
        term = ops.scalar_mul(loss, config.weight(level))
        total = term if total is None else ops.add(total, term)
    return total
