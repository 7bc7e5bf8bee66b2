"""View augmentations for contrastive batches.

Weak ops (flips) always run with their own probabilities. Strong ops (translation,
channel jitter, erasing) scale with ``strength`` and are skipped entirely at 0.
"""
from dataclasses import asdict, dataclass

import numpy as np

from hsat.exceptions import ConfigurationError


class AugmentationPolicyError(ConfigurationError):
    pass


@dataclass(frozen=True)
class AugmentationPolicy:
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    translate_max_px: int = 4
    channel_jitter_scale: float = 0.2
    erase_p: float = 0.25
    erase_area_frac: float = 0.1

    def validate(self) -> 'AugmentationPolicy':
        for key in ('hflip_p', 'vflip_p', 'erase_p', 'erase_area_frac'):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise AugmentationPolicyError(f'augment.{key}: must lie in [0, 1], got {value}')
        if self.translate_max_px < 0:
            raise AugmentationPolicyError(f'augment.translate_max_px: must be >= 0, got {self.translate_max_px}')
        if self.channel_jitter_scale < 0:
            raise AugmentationPolicyError(
                f'augment.channel_jitter_scale: must be >= 0, got {self.channel_jitter_scale}')
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(property_values: dict) -> 'AugmentationPolicy':
        try:
            return AugmentationPolicy(**property_values).validate()
        except TypeError as e:
            raise AugmentationPolicyError(f'augment: {e}')


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def vflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1, :].copy()


def translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer shift with edge padding; C x H x W in, same shape out."""
    _, height, width = image.shape
    pad_y, pad_x = abs(dy), abs(dx)
    padded = np.pad(image, ((0, 0), (pad_y, pad_y), (pad_x, pad_x)), mode='edge')
    top = pad_y - dy
    left = pad_x - dx
    return padded[:, top:top + height, left:left + width].copy()


def channel_jitter(image: np.ndarray, factors: np.ndarray) -> np.ndarray:
    return image * factors.reshape(-1, 1, 1)


def erase(image: np.ndarray, top: int, left: int, height: int, width: int, fill: float) -> np.ndarray:
    out = image.copy()
    out[:, top:top + height, left:left + width] = fill
    return out


def augment(image: np.ndarray, policy: AugmentationPolicy, strength: float, rng: np.random.Generator) -> np.ndarray:
    strength = float(np.clip(strength, 0.0, 1.0))
    out = np.asarray(image, dtype=np.float64)
    if rng.random() < policy.hflip_p:
        out = hflip(out)
    if rng.random() < policy.vflip_p:
        out = vflip(out)
    if strength == 0.0:
        return np.clip(out, 0.0, 1.0)

    _, height, width = out.shape
    shift = int(round(policy.translate_max_px * strength))
    if shift > 0:
        dy, dx = rng.integers(-shift, shift + 1, size=2)
        out = translate(out, int(dy), int(dx))

    jitter = policy.channel_jitter_scale * strength
    if jitter > 0:
        out = channel_jitter(out, 1.0 + rng.uniform(-jitter, jitter, size=out.shape[0]))

    if rng.random() < policy.erase_p * strength:
        area = policy.erase_area_frac * height * width
        erase_h = int(np.clip(round(np.sqrt(area * height / width)), 1, height))
        erase_w = int(np.clip(round(area / erase_h), 1, width))
        top = int(rng.integers(0, height - erase_h + 1))
        left = int(rng.integers(0, width - erase_w + 1))
        out = erase(out, top, left, erase_h, erase_w, float(rng.random()))

    return np.clip(out, 0.0, 1.0)


def strength_schedule(t: int, total: int, ramp_frac: float = 0.25) -> float:
    """Linear ramp of augmentation strength from 0 to 1 over the first ramp_frac of training."""
    ramp = ramp_frac * total
    if ramp <= 0:
        return 1.0
    return float(min(1.0, t / ramp))
