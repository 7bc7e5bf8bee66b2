import json

import pytest

from hsat.cli.config import (PRESETS, ExperimentConfig, InvalidConfigValueError, UnknownConfigKeyError,
                             apply_overrides, default_document, known_paths, load_preset, parse_config)
from hsat.contrastive.positives import Level
from hsat.exceptions import ConfigurationError
from hsat.model.encoder import Architecture


def test_defaults():
    cfg = parse_config()
    assert cfg.train.iterations == 2000
    assert cfg.train.dims == (2, 2, 2, 2)
    assert cfg.train.lr == 1e-3
    assert cfg.attack.eps == 8 / 255
    assert cfg.attack.steps == 5
    assert cfg.loss.temperature == 0.07
    assert cfg.eval.k == 10
    assert cfg.model.projection_dim == 128
    assert cfg.seed == 0


def test_document_sections():
    document = default_document()
    assert set(document) == {'data', 'augment', 'model', 'loss', 'attack', 'train', 'eval', 'seed', 'out'}
    assert 'seed' not in document['train']
    assert 'attack.eps' in known_paths(document)


def test_string_overrides_are_coerced():
    cfg = parse_config(overrides={
        'attack.eps': '4/255', 'train.iterations': '5', 'loss.levels': 'patch,slide', 'train.adversarial': 'false',
        'model.input_shape': '[3,8,8]', 'model.conv_channels': '[4]', 'model.architecture': 'mlp',
        'train.max_levels': 'patch',
    })
    assert cfg.attack.eps == 4 / 255
    assert cfg.train.iterations == 5
    assert cfg.loss.levels == (Level.PATCH, Level.SLIDE)
    assert cfg.train.adversarial is False
    assert cfg.model.input_shape == (3, 8, 8)
    assert cfg.model.architecture == Architecture.MLP
    assert cfg.train.max_levels == (Level.PATCH,)


def test_typed_overrides():
    cfg = parse_config(overrides={'eval.rules': ['bim'], 'eval.eps': ['8/255'], 'seed': 3})
    assert [a.name for a in cfg.eval.attacks()] == ['bim-10 eps=8/255']


def test_seed_reaches_every_section():
    cfg = parse_config(overrides={'seed': '7'})
    assert cfg.data.seed == 7
    assert cfg.train.seed == 7
    assert cfg.eval.seed == 7


def test_unknown_key_suggests_closest():
    with pytest.raises(UnknownConfigKeyError) as error:
        parse_config(overrides={'atack.eps': '8/255'})
    print(error.value)
    assert 'did you mean "attack.eps"' in str(error.value)
    assert issubclass(UnknownConfigKeyError, ConfigurationError)


@pytest.mark.parametrize('overrides', [
    {'train.iterations': 'many'},
    {'train.adversarial': 'maybe'},
    {'attack.eps': 'eight'},
    {'attack.eps': '2'},
    {'seed': '-1'},
])
def test_invalid_values(overrides):
    with pytest.raises(ConfigurationError):
        parse_config(overrides=overrides)


def test_section_cannot_be_overridden_whole():
    with pytest.raises(InvalidConfigValueError, match='section'):
        apply_overrides(default_document(), {'train': '1'})


def test_presets():
    for name in PRESETS:
        parse_config(preset=name)
    patch = parse_config(preset='hsat-patch')
    assert patch.train.dims == (8, 1, 1, 2)
    assert patch.loss.levels == (Level.PATCH,)
    assert parse_config(preset='baseline').train.adversarial is False
    assert parse_config(preset='hsat-slide').train.dims == (4, 2, 1, 2)


def test_unknown_preset():
    with pytest.raises(InvalidConfigValueError, match='hsat-patient'):
        load_preset('hsat-patients')


def test_file_then_overrides(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps({'train': {'iterations': 7, 'lr': 0.01}, 'out': 'runs/x'}))
    cfg = parse_config(str(path), {'train.lr': '0.002'}, preset='baseline')
    assert cfg.train.iterations == 7
    assert cfg.train.lr == 0.002
    assert cfg.train.adversarial is False
    assert cfg.out == 'runs/x'


def test_bad_files(tmp_path):
    broken = tmp_path / 'broken.json'
    broken.write_text('{"train": ')
    with pytest.raises(InvalidConfigValueError, match='not valid JSON'):
        parse_config(str(broken))
    unknown = tmp_path / 'unknown.json'
    unknown.write_text(json.dumps({'train': {'epochs': 3}}))
    with pytest.raises(UnknownConfigKeyError):
        parse_config(str(unknown))
    with pytest.raises(InvalidConfigValueError):
        parse_config(str(tmp_path / 'absent.json'))


def test_round_trip():
    cfg = parse_config(overrides={'attack.rule': 'mifgsm', 'loss.nested': 'false', 'seed': '2'})
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize('section, key, value', [
    ('train', 'iterations', 2.5),
    ('train', 'n', 2.0),
    ('eval', 'k', 3.0),
    ('train', 'n_a', True),
])
def test_integer_keys_reject_other_numbers(tmp_path, section, key, value):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps({section: {key: value}}))
    with pytest.raises(InvalidConfigValueError, match=f'{section}.{key}'):
        parse_config(str(path))
    with pytest.raises(InvalidConfigValueError, match=f'{section}.{key}'):
        apply_overrides(default_document(), {f'{section}.{key}': value})
    with pytest.raises(InvalidConfigValueError, match=f'{section}.{key}'):
        parse_config(overrides={f'{section}.{key}': str(value)})


def test_float_keys_still_take_integers():
    cfg = parse_config(overrides={'train.lr': 1, 'attack.eps': 0})
    assert cfg.train.lr == 1.0
    assert cfg.attack.eps == 0.0
