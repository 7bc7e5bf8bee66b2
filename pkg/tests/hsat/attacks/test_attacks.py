import numpy as np
import pytest

from hsat.attacks.attacks import (attack, clean_features, cosine_attack, craft_adversarial, hier_attack, mean_cosine,
                                  run_attack)
from hsat.attacks.config import AttackConfig, AttackConfigError
from hsat.attacks.step_rules import StepState, initial_delta, mifgsm_step, project
from hsat.contrastive.losses import LossConfig
from hsat.model.encoder import init_params
from hsat.tensor_engine import ops
from tests.hsat.helpers import TINY_MLP, grid_batch

SHAPE = (4, 3, 4, 4)


def _wavy(weights):
    def objective(x):
        return ops.sum(ops.mul(ops.sqrt(ops.add(ops.mul(x, x), 0.1)), weights))
    return objective


def _linear(weights):
    def objective(x):
        return ops.sum(ops.mul(x, weights))
    return objective


@pytest.fixture(scope='module')
def params():
    return init_params(TINY_MLP, 0)


@pytest.mark.parametrize('rule', ['pgd', 'bim', 'mifgsm'])
@pytest.mark.parametrize('eps', [0.0, 4 / 255, 8 / 255])
def test_ball_invariants(rule, eps):
    for seed in range(112):
        rng = np.random.default_rng(seed)
        x = rng.random(SHAPE)
        x[0, 0, 0, :] = [0.0, 1.0, 0.0, 1.0]
        atk = AttackConfig(rule=rule, eps=eps, steps=int(rng.integers(1, 6)), alpha=float(rng.uniform(0.001, 0.05)))
        result = run_attack(_wavy(rng.normal(size=SHAPE)), x, atk, rng)
        assert np.max(np.abs(result.delta)) <= eps
        assert result.x_adv.min() >= 0.0
        assert result.x_adv.max() <= 1.0
        assert np.max(np.abs(result.x_adv - x)) <= eps + 1e-12


def test_zero_steps_returns_clean_input():
    x = np.random.default_rng(0).random(SHAPE)
    result = run_attack(_linear(np.ones(SHAPE)), x, AttackConfig(steps=0), np.random.default_rng(0))
    np.testing.assert_array_equal(result.x_adv, x)
    assert not np.any(result.delta)
    assert result.objective_trace == ()


def test_zero_budget_leaves_input_unchanged():
    x = np.random.default_rng(1).random(SHAPE)
    result = run_attack(_linear(np.ones(SHAPE)), x, AttackConfig(eps=0.0, steps=3), np.random.default_rng(0))
    np.testing.assert_array_equal(result.x_adv, x)
    assert len(result.objective_trace) == 4
    assert len(set(result.objective_trace)) == 1


@pytest.mark.parametrize('rule', ['pgd', 'bim', 'mifgsm'])
def test_zero_gradient_keeps_zero_delta(rule):
    x = np.full(SHAPE, 0.5)
    atk = AttackConfig(rule=rule, steps=4, random_start=False)
    result = run_attack(_linear(np.zeros(SHAPE)), x, atk, np.random.default_rng(0))
    assert not np.any(result.delta)


def test_linear_objective_reaches_budget_corner():
    rng = np.random.default_rng(2)
    x = np.full(SHAPE, 0.5)
    weights = rng.normal(size=SHAPE)
    eps = 8 / 255
    atk = AttackConfig(rule='bim', eps=eps, steps=5)
    result = run_attack(_linear(weights), x, atk, rng)
    trace = result.objective_trace
    assert len(trace) == 6
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] == pytest.approx(np.sum(weights * x) + eps * np.sum(np.abs(weights)), rel=1e-12)
    np.testing.assert_allclose(result.delta, eps * np.sign(weights), rtol=0, atol=1e-15)


def test_linear_objective_climbs_until_the_boundary_then_holds():
    rng = np.random.default_rng(5)
    weights = rng.normal(size=SHAPE)
    eps = 8 / 255
    atk = AttackConfig(rule='bim', eps=eps, steps=5, alpha=0.4 * eps)
    trace = run_attack(_linear(weights), np.full(SHAPE, 0.5), atk, rng).objective_trace
    assert len(trace) == 6
    assert trace[0] < trace[1] < trace[2] < trace[3]
    assert trace[3] == trace[4] == trace[5]


def test_bim_equals_pgd_without_random_start():
    rng = np.random.default_rng(3)
    x = rng.random(SHAPE)
    objective = _wavy(rng.normal(size=SHAPE))
    pgd = run_attack(objective, x, AttackConfig(rule='pgd', random_start=False, steps=4), np.random.default_rng(9))
    bim = run_attack(objective, x, AttackConfig(rule='bim', random_start=False, steps=4), np.random.default_rng(9))
    assert pgd.x_adv.tobytes() == bim.x_adv.tobytes()
    assert pgd.objective_trace == bim.objective_trace


def test_mifgsm_without_momentum_equals_bim():
    rng = np.random.default_rng(4)
    x = rng.random(SHAPE)
    objective = _wavy(rng.normal(size=SHAPE))
    bim = run_attack(objective, x, AttackConfig(rule='bim', steps=4), np.random.default_rng(0))
    mifgsm = run_attack(objective, x, AttackConfig(rule='mifgsm', momentum=0.0, steps=4), np.random.default_rng(0))
    assert bim.x_adv.tobytes() == mifgsm.x_adv.tobytes()


def test_mifgsm_normalizes_each_sample():
    grad = np.zeros((2, 1, 1, 2))
    grad[0, 0, 0] = [3.0, -1.0]
    grad[1, 0, 0] = [0.5, 0.5]
    state = StepState()
    atk = AttackConfig(rule='mifgsm', alpha=0.1)
    step = mifgsm_step(grad, state, atk)
    np.testing.assert_allclose(state.velocity[0, 0, 0], [0.75, -0.25])
    np.testing.assert_allclose(state.velocity[1, 0, 0], [0.5, 0.5])
    np.testing.assert_allclose(step[0, 0, 0], [0.1, -0.1])


def test_initial_delta_only_draws_for_pgd():
    x = np.full(SHAPE, 0.5)
    eps = 8 / 255
    rng = np.random.default_rng(5)
    delta = initial_delta(x, AttackConfig(rule='pgd', eps=eps), rng)
    assert np.any(delta)
    assert np.max(np.abs(delta)) <= eps

    for rule in ('bim', 'mifgsm'):
        rng_a, rng_b = np.random.default_rng(6), np.random.default_rng(6)
        assert not np.any(initial_delta(x, AttackConfig(rule=rule, eps=eps), rng_a))
        assert rng_a.random() == rng_b.random()


def test_project_respects_pixel_box():
    x = np.array([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(project(x, np.array([-0.2, 0.3, 0.2]), 0.1), [0.0, 0.1, 0.0])


def test_cosine_attack_moves_features(params):
    x = np.random.default_rng(7).random((3,) + TINY_MLP.input_shape)
    atk = AttackConfig(objective='neg_feature_cosine', rule='pgd', eps=8 / 255, steps=3)
    result = cosine_attack(params, x, atk, np.random.default_rng(0))
    assert result.objective_trace[-1] > 0.0
    assert mean_cosine(params, x, result.x_adv) < 1.0
    assert mean_cosine(params, x, x) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(result.x_adv - x)) <= 8 / 255 + 1e-12


def test_cosine_attack_without_steps(params):
    x = np.random.default_rng(8).random((2,) + TINY_MLP.input_shape)
    result = cosine_attack(params, x, AttackConfig(objective='neg_feature_cosine', steps=0), np.random.default_rng(0))
    assert mean_cosine(params, x, result.x_adv) == pytest.approx(1.0, abs=1e-12)


def test_clean_features_are_unit_norm(params):
    x = np.random.default_rng(9).random((5,) + TINY_MLP.input_shape)
    norms = np.linalg.norm(clean_features(params, x), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_hier_attack_stays_in_ball(params):
    batch = grid_batch(2, 1, 2, 2)
    x = np.random.default_rng(10).random((len(batch),) + TINY_MLP.input_shape)
    atk = AttackConfig(eps=4 / 255, steps=2)
    result = hier_attack(params, x, batch, LossConfig(temperature=0.5), atk, np.random.default_rng(0))
    assert len(result.objective_trace) == 3
    assert np.all(np.isfinite(result.objective_trace))
    assert np.max(np.abs(result.x_adv - x)) <= 4 / 255 + 1e-12


def test_clean_negatives_change_objective(params):
    batch = grid_batch(2, 1, 1, 2)
    x = np.random.default_rng(11).random((len(batch),) + TINY_MLP.input_shape)
    loss_cfg = LossConfig(temperature=0.5)
    plain = hier_attack(params, x, batch, loss_cfg, AttackConfig(steps=1), np.random.default_rng(0))
    clean = hier_attack(params, x, batch, loss_cfg, AttackConfig(steps=1, contrast_clean_negatives=True),
                        np.random.default_rng(0))
    assert plain.objective_trace[0] != clean.objective_trace[0]


def test_dispatch_needs_batch_for_hierarchical_objective(params):
    x = np.random.default_rng(12).random((2,) + TINY_MLP.input_shape)
    with pytest.raises(AttackConfigError):
        attack(params, x, AttackConfig(), np.random.default_rng(0))
    result = attack(params, x, AttackConfig(objective='neg_feature_cosine', steps=1), np.random.default_rng(0))
    assert result.x_adv.shape == x.shape


def test_craft_adversarial_is_seeded_and_chunked(params):
    images = np.random.default_rng(13).random((5,) + TINY_MLP.input_shape)
    atk = AttackConfig(rule='pgd', steps=2)
    a = craft_adversarial(params, images, atk, seed=3, batch_size=2)
    b = craft_adversarial(params, images, atk, seed=3, batch_size=2)
    assert a.shape == images.shape
    assert a.tobytes() == b.tobytes()
    assert np.max(np.abs(a - images)) <= 8 / 255 + 1e-12
