import dataclasses
import json
import os

import numpy as np
import pytest

from hsat.attacks.config import AttackConfig
from hsat.contrastive.losses import LossConfig
from hsat.contrastive.positives import Level
from hsat.exceptions import ConfigurationError
from hsat.hierdata.synthetic import generate_synthetic
from hsat.model.checkpoint import load_checkpoint
from hsat.model.encoder import init_params
from hsat.trainer.train import TRAIN_LOG, NonFiniteLossError, TrainConfig, TrainConfigError, train
from tests.hsat.helpers import TINY, TINY_CONV

SHORT = TrainConfig(iterations=3, attack=AttackConfig(steps=2), log_every=2)


@pytest.fixture(scope='module')
def dataset():
    return generate_synthetic(TINY, verify_snr=False)


def _same(a, b):
    return all(a[name].tobytes() == b[name].tobytes() for name in a.names)


def test_training_changes_parameters(dataset):
    params = init_params(TINY_CONV, 0)
    result = train(dataset, params, SHORT)
    assert not _same(result.params, params)
    assert [record['iteration'] for record in result.log] == [0, 2]
    assert set(result.log[0]) == {'iteration', 'lr', 'eps', 'loss_patch', 'loss_slide', 'loss_patient', 'strength',
                                  'wall_ms'}
    assert result.log[0]['eps'] == 0.0
    assert result.checkpoints == []


def test_training_is_deterministic(dataset):
    a = train(dataset, init_params(TINY_CONV, 1), SHORT)
    b = train(dataset, init_params(TINY_CONV, 1), SHORT)
    assert _same(a.params, b.params)


def test_zero_step_attack_matches_plain_training(dataset):
    plain = dataclasses.replace(SHORT, adversarial=False)
    no_steps = dataclasses.replace(SHORT, attack=AttackConfig(steps=0, random_start=False))
    a = train(dataset, init_params(TINY_CONV, 2), plain)
    b = train(dataset, init_params(TINY_CONV, 2), no_steps)
    assert _same(a.params, b.params)


def test_zero_learning_rate_keeps_parameters(dataset):
    params = init_params(TINY_CONV, 3)
    result = train(dataset, params, dataclasses.replace(SHORT, lr=0.0, adversarial=False))
    assert _same(result.params, params)


def test_single_level_training(dataset):
    cfg = dataclasses.replace(SHORT, loss=SHORT.loss.with_levels(['patient']), max_levels=['patch'])
    result = train(dataset, init_params(TINY_CONV, 4), cfg)
    assert result.log[0]['loss_patch'] is None
    assert result.log[0]['loss_patient'] is not None
    assert cfg.max_loss().levels == (Level.PATCH,)


def test_outputs_written(dataset, tmp_path):
    out = str(tmp_path / 'run')
    cfg = dataclasses.replace(SHORT, checkpoint_every=1)
    result = train(dataset, init_params(TINY_CONV, 5), cfg, out)
    assert [os.path.basename(p) for p in result.checkpoints] == ['ckpt_000001.ckpt', 'ckpt_000002.ckpt',
                                                                 'final.ckpt']
    with open(os.path.join(out, TRAIN_LOG)) as fp:
        records = [json.loads(line) for line in fp]
    assert [r['iteration'] for r in records] == [0, 2]
    assert _same(load_checkpoint(os.path.join(out, 'final.ckpt')), result.params)


def test_non_finite_loss_is_reported(dataset):
    params = init_params(TINY_CONV, 6)
    arrays = {name: np.array(array) for name, array in params.items()}
    arrays['head.fc2.weight'][0, 0] = np.nan
    with pytest.raises(NonFiniteLossError) as error:
        train(dataset, params.replace(arrays), dataclasses.replace(SHORT, adversarial=False))
    assert error.value.snapshot['iteration'] == 0


@pytest.mark.parametrize('changes', [
    {'iterations': 0}, {'n_a': 0}, {'warmup_frac': 1.5}, {'betas': (0.9, 1.0)}, {'log_every': 0}, {'lr': -1.0},
])
def test_config_validation(changes):
    with pytest.raises(TrainConfigError):
        dataclasses.replace(SHORT, **changes).validate()


def test_config_json_round_trip():
    cfg = TrainConfig(iterations=10, max_levels=['slide'])
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    assert 'attack' not in cfg.to_json()
    with pytest.raises(TrainConfigError):
        TrainConfig.from_json({'epochs': 3})


def test_loss_goes_down_without_attack(dataset):
    cfg = dataclasses.replace(SHORT, iterations=120, lr=3e-3, adversarial=False, aug_ramp_frac=0.0, log_every=1)
    result = train(dataset, init_params(TINY_CONV, 7), cfg)
    totals = [sum(record[f'loss_{level.value}'] for level in Level) for record in result.log]
    window = len(totals) // 10
    assert len(totals) == 120
    assert np.median(totals[-window:]) < np.median(totals[:window])


@pytest.mark.parametrize('changes, level', [
    ({'n_a': 1, 'loss': LossConfig(levels=['patch'])}, 'patch'),
    ({'n_a': 1, 'loss': LossConfig(levels=['patch', 'slide'])}, 'patch'),
    ({'n_p': 1, 'loss': LossConfig(levels=['slide'], nested=False)}, 'slide'),
    ({'n_s': 1, 'loss': LossConfig(nested=False)}, 'patient'),
])
def test_levels_without_positives_are_rejected(changes, level):
    with pytest.raises(TrainConfigError, match=f'"{level}"') as error:
        dataclasses.replace(SHORT, **changes).validate()
    assert isinstance(error.value, ConfigurationError)


def test_maximized_levels_need_positives_only_when_adversarial():
    cfg = dataclasses.replace(SHORT, n_a=1, loss=LossConfig(levels=['slide', 'patient']), max_levels=['patch'])
    with pytest.raises(TrainConfigError, match='train.max_levels'):
        cfg.validate()
    dataclasses.replace(cfg, adversarial=False).validate()


def test_single_slide_and_patch_batches_stay_valid():
    TrainConfig(n=8, n_s=1, n_p=1, n_a=2, loss=LossConfig(levels=['patch'])).validate()
    TrainConfig(n=4, n_s=2, n_p=1, n_a=2).validate()
