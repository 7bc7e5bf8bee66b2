"""Experiment configuration documents.

A document is a JSON object with the sections data, augment, model, loss, attack, train
and eval plus the top-level seed and out. Values are resolved in this order: built-in
defaults, preset, config file, dotted-path overrides (``--attack.eps 8/255``).
"""
import copy
import difflib
import json
import os
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional

from dictor import dictor
from logzero import logger

from hsat.attacks.config import AttackConfig, parse_fraction
from hsat.contrastive.losses import LossConfig
from hsat.evaluator.evaluate import EvalConfig
from hsat.exceptions import ConfigurationError
from hsat.hierdata.augment import AugmentationPolicy
from hsat.hierdata.synthetic import GeneratorConfig
from hsat.model.encoder import EncoderConfig
from hsat.trainer.train import TrainConfig

PRESET_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'presets')
PRESETS = ('baseline', 'hsat-patch', 'hsat-slide', 'hsat-patient')
SECTIONS = ('data', 'augment', 'model', 'loss', 'attack', 'train', 'eval')
FRACTION_KEYS = {'attack.eps', 'attack.alpha', 'data.class_scale'}
LIST_KEYS = {'train.max_levels'}


class UnknownConfigKeyError(ConfigurationError):
    pass


class InvalidConfigValueError(ConfigurationError):
    pass


def _seedless(values: dict) -> dict:
    values = dict(values)
    values.pop('seed', None)
    return values


def default_document() -> dict:
    return {
        'data': _seedless(GeneratorConfig().to_json()),
        'augment': AugmentationPolicy().to_json(),
        'model': EncoderConfig().to_json(),
        'loss': LossConfig().to_json(),
        'attack': AttackConfig().to_json(),
        'train': _seedless(TrainConfig().to_json()),
        'eval': _seedless(EvalConfig().to_json()),
        'seed': 0,
        'out': os.path.join('runs', 'hsat'),
    }


def known_paths(document: Mapping, prefix: str = '') -> List[str]:
    paths = []
    for key, value in document.items():
        path = f'{prefix}{key}'
        paths.append(path)
        if isinstance(value, dict):
            paths.extend(known_paths(value, f'{path}.'))
    return paths


def _unknown_key(path: str, document: Mapping) -> UnknownConfigKeyError:
    matches = difflib.get_close_matches(path, known_paths(document), n=1)
    hint = f'; did you mean "{matches[0]}"?' if matches else ''
    return UnknownConfigKeyError(f'Unknown config key "{path}"{hint}')


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_type(path: str, current, value):
    if current is None or value is None:
        return
    if isinstance(current, int) and not isinstance(current, bool) and path not in FRACTION_KEYS:
        if isinstance(value, int) and not isinstance(value, bool):
            return
        raise InvalidConfigValueError(f'Config key "{path}" expects an integer, got {value!r}')
    if _is_number(current) and (_is_number(value) or (path in FRACTION_KEYS and isinstance(value, str))):
        return
    if isinstance(current, (list, tuple)) and isinstance(value, (list, tuple)):
        return
    if type(current) is type(value):
        return
    raise InvalidConfigValueError(
        f'Config key "{path}" expects {type(current).__name__}, got {type(value).__name__} ({value!r})')


def merge_document(base: dict, update: Mapping, root: Optional[Mapping] = None, prefix: str = '') -> dict:
    """Deep-merge ``update`` into ``base`` in place, rejecting keys ``base`` does not define."""
    root = base if root is None else root
    for key, value in update.items():
        path = f'{prefix}{key}'
        if key not in base:
            raise _unknown_key(path, root)
        if isinstance(base[key], dict) and isinstance(value, Mapping):
            merge_document(base[key], value, root, f'{path}.')
            continue
        _check_type(path, base[key], value)
        base[key] = copy.deepcopy(value)
    return base


def _coerce(path: str, raw: str, current):
    """Turn a command-line string into the type of the value it replaces."""
    try:
        if path in FRACTION_KEYS or (_is_number(current) and isinstance(current, float)):
            return parse_fraction(raw, path)
        if isinstance(current, bool):
            lowered = raw.strip().lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(f'not a boolean: {raw!r}')
            return lowered in ('true', '1', 'yes')
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, (list, tuple)) or path in LIST_KEYS:
            if raw.strip().startswith('['):
                return json.loads(raw)
            return [part.strip() for part in raw.split(',') if part.strip()]
        if current is None:
            try:
                return json.loads(raw)
            except json.JSONDecodeError:
                return raw
        return raw
    except (ValueError, json.JSONDecodeError) as e:
        raise InvalidConfigValueError(f'Config key "{path}": cannot use {raw!r} ({e})')


def apply_overrides(document: dict, overrides: Mapping[str, Any]) -> dict:
    """Set dotted paths in place. String values are coerced to the type of the value they replace."""
    for path, new_value in overrides.items():
        path_parts = path.split('.')
        update_key = path_parts[-1]
        key_path = '.'.join(path_parts[0:-1])

        update_attr = document if key_path == '' else dictor(document, key_path)
        if not isinstance(update_attr, dict) or update_key not in update_attr:
            raise _unknown_key(path, document)
        current = update_attr[update_key]
        if isinstance(current, dict):
            raise InvalidConfigValueError(f'Config key "{path}" is a section; set one of its keys instead')

        value = _coerce(path, new_value, current) if isinstance(new_value, str) else new_value
        _check_type(path, current, value)
        logger.debug(f'Path: "{path}" CurrentValue: "{current}" NewValue: "{value}"')
        update_attr[update_key] = value
    return document


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        matches = difflib.get_close_matches(name, PRESETS, n=1)
        hint = f'; did you mean "{matches[0]}"?' if matches else ''
        raise InvalidConfigValueError(f'Unknown preset "{name}"{hint}')
    with open(os.path.join(PRESET_DIR, f'{name}.json')) as fp:
        return json.load(fp)


def read_config_file(path: str) -> dict:
    try:
        with open(path) as fp:
            values = json.load(fp)
    except OSError as e:
        raise InvalidConfigValueError(f'Cannot read config file {path}: {e}')
    except json.JSONDecodeError as e:
        raise InvalidConfigValueError(f'Config file {path} is not valid JSON: {e}')
    if not isinstance(values, dict):
        raise InvalidConfigValueError(f'Config file {path} must hold a JSON object')
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    data: GeneratorConfig
    augment: AugmentationPolicy
    model: EncoderConfig
    loss: LossConfig
    attack: AttackConfig
    train: TrainConfig
    eval: EvalConfig
    seed: int = 0
    out: str = os.path.join('runs', 'hsat')

    def to_json(self) -> dict:
        return {
            'data': _seedless(self.data.to_json()),
            'augment': self.augment.to_json(),
            'model': self.model.to_json(),
            'loss': self.loss.to_json(),
            'attack': self.attack.to_json(),
            'train': _seedless(self.train.to_json()),
            'eval': _seedless(self.eval.to_json()),
            'seed': self.seed,
            'out': self.out,
        }

    @staticmethod
    def from_json(property_values: Mapping) -> 'ExperimentConfig':
        document = merge_document(default_document(), property_values)
        seed = document['seed']
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise InvalidConfigValueError(f'Config key "seed" must be a non-negative integer, got {seed!r}')
        try:
            loss = LossConfig.from_json(document['loss'])
            attack = AttackConfig.from_json(document['attack'])
            augment = AugmentationPolicy.from_json(document['augment'])
            return ExperimentConfig(
                data=GeneratorConfig.from_json(dict(document['data'], seed=seed)),
                augment=augment,
                model=EncoderConfig.from_json(document['model']),
                loss=loss,
                attack=attack,
                train=TrainConfig.from_json(dict(document['train'], seed=seed), attack=attack, loss=loss,
                                            augment=augment),
                eval=EvalConfig.from_json(dict(document['eval'], seed=seed)),
                seed=seed,
                out=str(document['out']))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise InvalidConfigValueError(f'Invalid config value: {e}')


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                 preset: Optional[str] = None) -> ExperimentConfig:
    """Defaults, then preset, then file, then overrides; validated before any work starts."""
    document = default_document()
    if preset:
        merge_document(document, load_preset(preset))
    if path:
        merge_document(document, read_config_file(path))
    if overrides:
        apply_overrides(document, overrides)
    return ExperimentConfig.from_json(document)
