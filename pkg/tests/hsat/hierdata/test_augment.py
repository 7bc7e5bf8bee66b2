import numpy as np
import pytest

from hsat.hierdata.augment import (AugmentationPolicy, AugmentationPolicyError, augment, hflip, strength_schedule,
                                   translate)

IMAGE = np.random.default_rng(0).random((3, 8, 8))
STILL = AugmentationPolicy(hflip_p=0.0, vflip_p=0.0, translate_max_px=0, channel_jitter_scale=0.0, erase_p=0.0)


def test_zero_strength_without_flips_is_identity():
    policy = AugmentationPolicy(hflip_p=0.0, vflip_p=0.0)
    out = augment(IMAGE, policy, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(out, IMAGE)


def test_flips_still_apply_at_zero_strength():
    policy = AugmentationPolicy(hflip_p=1.0, vflip_p=0.0)
    out = augment(IMAGE, policy, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(out, IMAGE[..., ::-1])


@pytest.mark.parametrize('strength', [0.0, 0.3, 1.0])
def test_output_stays_in_unit_range(strength):
    policy = AugmentationPolicy(channel_jitter_scale=0.9)
    for seed in range(10):
        out = augment(IMAGE, policy, strength, np.random.default_rng(seed))
        assert out.shape == IMAGE.shape
        assert out.min() >= 0.0
        assert out.max() <= 1.0


def test_same_generator_same_view():
    policy = AugmentationPolicy()
    a = augment(IMAGE, policy, 1.0, np.random.default_rng(7))
    b = augment(IMAGE, policy, 1.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_full_area_erase_fills_image():
    policy = AugmentationPolicy(hflip_p=0.0, vflip_p=0.0, translate_max_px=0, channel_jitter_scale=0.0, erase_p=1.0,
                                erase_area_frac=1.0)
    out = augment(IMAGE, policy, 1.0, np.random.default_rng(3))
    assert np.unique(out).size == 1


def test_still_policy_at_full_strength_is_identity():
    np.testing.assert_array_equal(augment(IMAGE, STILL, 1.0, np.random.default_rng(0)), IMAGE)


def test_double_flip():
    np.testing.assert_array_equal(hflip(hflip(IMAGE)), IMAGE)


def test_translate_shifts_with_edge_padding():
    out = translate(IMAGE, 1, 0)
    np.testing.assert_array_equal(out[:, 1:, :], IMAGE[:, :-1, :])
    np.testing.assert_array_equal(out[:, 0, :], IMAGE[:, 0, :])
    np.testing.assert_array_equal(translate(IMAGE, 0, 0), IMAGE)


def test_policy_validation():
    with pytest.raises(AugmentationPolicyError):
        AugmentationPolicy(hflip_p=1.5).validate()
    with pytest.raises(AugmentationPolicyError):
        AugmentationPolicy.from_json({'rotate': 1})
    assert AugmentationPolicy.from_json(AugmentationPolicy().to_json()) == AugmentationPolicy()


def test_strength_schedule():
    assert strength_schedule(0, 100) == 0.0
    assert strength_schedule(10, 100) == pytest.approx(0.4)
    assert strength_schedule(25, 100) == 1.0
    assert strength_schedule(90, 100) == 1.0
    assert strength_schedule(0, 100, ramp_frac=0.0) == 1.0
