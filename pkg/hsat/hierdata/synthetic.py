"""Synthetic patient/slide/patch datasets.

Every image is rendered from a nested generative model::

    clip(0.5 + class_scale * template[class] + patient_scale * field[patient]
         + slide_scale * field[slide] + patch_noise * noise[patch], 0, 1)

Templates and offset fields are sums of a few low-frequency sinusoids per channel. Each
component draws from its own generator seeded by (seed, kind, ids), so any single
image can be rebuilt without replaying the others.

When ``class_scale`` is left unset, a geometric ladder of scales is searched from strong
to weak signal and the first scale whose raw-pixel kNN patch accuracy on the val split
lies within ``snr_bounds`` is kept.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from logzero import logger

from hsat.exceptions import ConfigurationError, DataError
from hsat.hierdata.dataset import HierDataset
from hsat.hierdata.manifest import HierarchyManifest, Patient, Slide, Split

_TEMPLATE, _PATIENT, _SLIDE, _PATCH = range(4)


class GeneratorConfigError(ConfigurationError):
    pass


class SNRCheckError(DataError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    classes: int = 7
    patients_per_class: int = 6
    slides: int = 3
    patches: int = 16
    image_shape: Tuple[int, int, int] = (3, 32, 32)
    seed: int = 0
    val_fraction: float = 1.0 / 3.0
    class_scale: Optional[float] = None
    patient_scale: float = 0.12
    slide_scale: float = 0.06
    patch_noise: float = 0.08
    waves: int = 4
    snr_bounds: Tuple[float, float] = (0.40, 0.90)
    scale_ladder: Tuple[float, ...] = field(default_factory=lambda: tuple(0.8 ** i for i in range(21)))
    knn_k: int = 10

    def __post_init__(self):
        object.__setattr__(self, 'image_shape', tuple(int(v) for v in self.image_shape))
        object.__setattr__(self, 'snr_bounds', tuple(float(v) for v in self.snr_bounds))
        object.__setattr__(self, 'scale_ladder', tuple(float(v) for v in self.scale_ladder))

    def validate(self) -> 'GeneratorConfig':
        for key in ('classes', 'patients_per_class', 'slides', 'patches', 'waves', 'knn_k'):
            if getattr(self, key) < 1:
                raise GeneratorConfigError(f'data.{key}: must be >= 1, got {getattr(self, key)}')
        if len(self.image_shape) != 3 or any(v < 1 for v in self.image_shape):
            raise GeneratorConfigError(f'data.image_shape: expected three positive extents, got {self.image_shape}')
        if not 0.0 <= self.val_fraction < 1.0:
            raise GeneratorConfigError(f'data.val_fraction: must lie in [0, 1), got {self.val_fraction}')
        for key in ('patient_scale', 'slide_scale', 'patch_noise'):
            if getattr(self, key) < 0:
                raise GeneratorConfigError(f'data.{key}: must be >= 0, got {getattr(self, key)}')
        if self.class_scale is not None and self.class_scale < 0:
            raise GeneratorConfigError(f'data.class_scale: must be >= 0, got {self.class_scale}')
        low, high = self.snr_bounds
        if not 0.0 <= low <= high <= 1.0:
            raise GeneratorConfigError(f'data.snr_bounds: expected 0 <= low <= high <= 1, got {self.snr_bounds}')
        if not self.scale_ladder:
            raise GeneratorConfigError('data.scale_ladder: must hold at least one scale')
        return self

    def val_patients_per_class(self) -> int:
        if self.patients_per_class < 2:
            return 0
        count = int(round(self.patients_per_class * self.val_fraction))
        return min(self.patients_per_class - 1, max(1 if self.val_fraction > 0 else 0, count))

    def to_json(self) -> dict:
        values = asdict(self)
        for key in ('image_shape', 'snr_bounds', 'scale_ladder'):
            values[key] = list(values[key])
        return values

    @staticmethod
    def from_json(property_values: dict) -> 'GeneratorConfig':
        try:
            return GeneratorConfig(**property_values).validate()
        except TypeError as e:
            raise GeneratorConfigError(f'data: {e}')


def _field(rng: np.random.Generator, shape: Tuple[int, int, int], waves: int) -> np.ndarray:
    """Unit-variance sum of low-frequency sinusoids, per channel."""
    channels, height, width = shape
    ys = np.arange(height).reshape(-1, 1) / height
    xs = np.arange(width).reshape(1, -1) / width
    out = np.zeros(shape)
    for c in range(channels):
        for _ in range(waves):
            fy, fx = rng.integers(0, 4, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amplitude = rng.normal()
            out[c] += amplitude * np.sin(2.0 * np.pi * (fy * ys + fx * xs) + phase)
    std = out.std()
    return out / std if std > 0 else out


class _Components:
    """Scale-free pieces of every image, so calibration only recomposes them."""

    def __init__(self, config: GeneratorConfig, manifest: HierarchyManifest):
        shape = config.image_shape
        seed = config.seed
        self.templates = [_field(np.random.default_rng([seed, _TEMPLATE, c]), shape, config.waves)
                          for c in range(config.classes)]
        self.rows: List[Tuple[str, int, np.ndarray, np.ndarray, np.ndarray]] = []
        for p_index, patient in enumerate(manifest.patients()):
            patient_field = _field(np.random.default_rng([seed, _PATIENT, p_index]), shape, config.waves)
            for s_index, slide in enumerate(patient.slides):
                slide_field = _field(np.random.default_rng([seed, _SLIDE, p_index, s_index]), shape, config.waves)
                for q_index, patch_id in enumerate(slide.patches):
                    noise = np.random.default_rng([seed, _PATCH, p_index, s_index, q_index]).normal(size=shape)
                    self.rows.append((patch_id, patient.label, patient_field, slide_field, noise))

    def render(self, config: GeneratorConfig, class_scale: float) -> Dict[str, np.ndarray]:
        images = {}
        for patch_id, label, patient_field, slide_field, noise in self.rows:
            image = (0.5 + class_scale * self.templates[label] + config.patient_scale * patient_field
                     + config.slide_scale * slide_field + config.patch_noise * noise)
            images[patch_id] = np.clip(image, 0.0, 1.0)
        return images


def build_manifest(config: GeneratorConfig) -> HierarchyManifest:
    config.validate()
    val_count = config.val_patients_per_class()
    patients = []
    for label in range(config.classes):
        for k in range(config.patients_per_class):
            patient_id = f'P{label * config.patients_per_class + k:04d}'
            split = Split.VAL if k >= config.patients_per_class - val_count else Split.TRAIN
            slides = tuple(
                Slide(slide_id=f'{patient_id}-S{s}',
                      patches=tuple(f'{patient_id}-S{s}-p{q:03d}' for q in range(config.patches)))
                for s in range(config.slides))
            patients.append(Patient(patient_id=patient_id, label=label, split=split, slides=slides))
    return HierarchyManifest(patients=patients, classes=config.classes, image_shape=config.image_shape,
                             generator=config.to_json(), seed=config.seed)


def raw_pixel_accuracy(dataset: HierDataset, k: int) -> float:
    """Patch accuracy of a cosine kNN on mean-centered raw pixels, train bank against val queries."""
    from hsat.evaluator.knn import EmbeddingBank, knn_predict, normalize_rows

    train = dataset.patch_table(Split.TRAIN)
    val = dataset.patch_table(Split.VAL)
    if len(train) == 0 or len(val) == 0:
        raise SNRCheckError('SNR check needs both train and val patients; raise data.patients_per_class to >= 2')
    center = train.images.reshape(len(train), -1).mean(axis=0)
    bank = EmbeddingBank(normalize_rows(train.images.reshape(len(train), -1) - center), train.labels,
                         classes=dataset.manifest.classes)
    result = knn_predict(bank, normalize_rows(val.images.reshape(len(val), -1) - center), min(k, len(train)))
    return float(np.mean(result.predictions == val.labels))


def generate_synthetic(config: GeneratorConfig, out_dir: Optional[str] = None, *,
                       verify_snr: bool = True) -> HierDataset:
    manifest = build_manifest(config)
    components = _Components(config, manifest)
    low, high = config.snr_bounds

    if config.class_scale is not None:
        scale = config.class_scale
        dataset = HierDataset(manifest, components.render(config, scale))
        if verify_snr:
            accuracy = raw_pixel_accuracy(dataset, config.knn_k)
            if not low <= accuracy <= high:
                raise SNRCheckError(
                    f'Raw-pixel kNN patch accuracy {accuracy:.3f} at data.class_scale={scale} lies outside '
                    f'[{low}, {high}]; adjust data.class_scale or leave it unset to calibrate')
            logger.info(f'SNR check passed: raw-pixel kNN accuracy {accuracy:.3f} at class_scale {scale}')
    else:
        dataset = None
        tried = []
        for scale in sorted(config.scale_ladder, reverse=True):
            candidate = HierDataset(manifest, components.render(config, scale))
            accuracy = raw_pixel_accuracy(candidate, config.knn_k)
            tried.append((scale, accuracy))
            logger.debug(f'class_scale {scale:.4f}: raw-pixel kNN accuracy {accuracy:.3f}')
            if low <= accuracy <= high:
                dataset = candidate
                break
        if dataset is None:
            summary = ', '.join(f'{s:.3g}->{a:.2f}' for s, a in tried)
            raise SNRCheckError(
                f'No class_scale on the ladder gives raw-pixel kNN accuracy in [{low}, {high}] ({summary}); '
                f'change data.patient_scale, data.slide_scale or data.patch_noise')
        logger.info(f'Calibrated class_scale {scale:.4f} (raw-pixel kNN accuracy {accuracy:.3f})')
        generator = dict(manifest.generator, class_scale=scale)
        manifest = HierarchyManifest(patients=manifest.patients(), classes=manifest.classes,
                                     image_shape=manifest.image_shape, generator=generator, seed=manifest.seed)
        dataset = HierDataset(manifest, {p: dataset.image(p) for _, _, p in manifest.iter_patches()})

    if out_dir is not None:
        dataset.save(out_dir)
    return dataset
