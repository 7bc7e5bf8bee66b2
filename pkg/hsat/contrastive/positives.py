from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np

from hsat.hierdata.sampler import BatchIndex


class Level(Enum):
    PATCH = 'patch'
    SLIDE = 'slide'
    PATIENT = 'patient'


LEVEL_ORDER = (Level.PATCH, Level.SLIDE, Level.PATIENT)


def positive_set_size(level: Level, dims: Tuple[int, int, int, int], *, nested: bool = True) -> int:
    """Positives per anchor at one level for a batch of (n, n_s, n_p, n_a)."""
    _, n_s, n_p, n_a = dims
    within = {Level.PATCH: n_a, Level.SLIDE: n_p * n_a, Level.PATIENT: n_s * n_p * n_a}
    if nested or level == Level.PATCH:
        return within[level] - 1
    below = LEVEL_ORDER[LEVEL_ORDER.index(level) - 1]
    return within[level] - within[below]


class PositiveSets:
    """Boolean N x N masks: masks[level][i, j] is True when j is a positive of anchor i at that level.

    The candidate set P(i) is every index but i.
    """

    def __init__(self, masks: Dict[Level, np.ndarray]):
        sizes = {mask.shape for mask in masks.values()}
        if len(sizes) != 1:
            raise ValueError(f'PositiveSets: masks disagree on shape {sorted(sizes)}')
        (shape,) = sizes
        self._size = shape[0]
        self._masks = {level: np.array(masks[level], dtype=bool) for level in LEVEL_ORDER}
        for mask in self._masks.values():
            mask.flags.writeable = False
        self._candidates = ~np.eye(self._size, dtype=bool)
        self._candidates.flags.writeable = False

    @property
    def size(self) -> int:
        return self._size

    @property
    def candidates(self) -> np.ndarray:
        return self._candidates

    def mask(self, level: Level) -> np.ndarray:
        return self._masks[level]

    def positives(self, level: Level, anchor: int) -> np.ndarray:
        return np.flatnonzero(self._masks[level][anchor])

    def counts(self, level: Level) -> np.ndarray:
        return self._masks[level].sum(axis=1)

    def permute(self, perm: Sequence[int]) -> 'PositiveSets':
        """Sets for the batch reordered so that new row i is old row perm[i]."""
        perm = np.asarray(perm)
        return PositiveSets({level: mask[np.ix_(perm, perm)] for level, mask in self._masks.items()})


def build_positive_sets(batch: BatchIndex, *, nested: bool = True) -> PositiveSets:
    """Positive masks per level.

    nested=True: slide positives include the other views of the same patch, and patient
    positives include everything from the same slide. nested=False keeps the strata disjoint.
    """
    batch.validate()
    off_diagonal = ~np.eye(len(batch), dtype=bool)
    same = {}
    for level, ids in ((Level.PATCH, batch.patch_ids), (Level.SLIDE, batch.slide_ids),
                       (Level.PATIENT, batch.patient_ids)):
        ids = np.asarray(ids)
        same[level] = (ids[:, None] == ids[None, :]) & off_diagonal

    if nested:
        return PositiveSets(same)
    return PositiveSets({
        Level.PATCH: same[Level.PATCH],
        Level.SLIDE: same[Level.SLIDE] & ~same[Level.PATCH],
        Level.PATIENT: same[Level.PATIENT] & ~same[Level.SLIDE],
    })
