import numpy as np

from hsat.hierdata.sampler import BatchIndex
from hsat.hierdata.synthetic import GeneratorConfig
from hsat.model.encoder import EncoderConfig

TINY = GeneratorConfig(classes=2, patients_per_class=3, slides=2, patches=3, image_shape=(3, 8, 8), seed=4,
                       class_scale=0.3)

TINY_CONV = EncoderConfig(input_shape=(3, 8, 8), conv_channels=(4, 8), backbone_dim=16, projection_dim=8)

TINY_MLP = EncoderConfig(input_shape=(3, 8, 8), conv_channels=(16,), backbone_dim=16, projection_dim=8,
                         architecture='mlp')


def grid_batch(n, n_s, n_p, n_a) -> BatchIndex:
    """Batch index over made-up ids laid out patient-major."""
    patients, slides, patches = [], [], []
    for i in range(n):
        for s in range(n_s):
            for q in range(n_p):
                for _ in range(n_a):
                    patients.append(f'P{i}')
                    slides.append(f'P{i}-S{s}')
                    patches.append(f'P{i}-S{s}-p{q}')
    return BatchIndex.from_ids(patients, slides, patches, (n, n_s, n_p, n_a))


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
