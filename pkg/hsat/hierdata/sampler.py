from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hsat.exceptions import DataError
from hsat.hierdata.augment import AugmentationPolicy, augment
from hsat.hierdata.dataset import HierDataset
from hsat.hierdata.manifest import Split


class InsufficientHierarchyError(DataError):
    pass


class MalformedBatchError(DataError):
    pass


@dataclass(frozen=True)
class BatchRecord:
    global_index: int
    patient_id: str
    slide_id: str
    patch_id: str
    aug_id: int


class BatchIndex:
    """Flat, patient-major listing of one batch: patient, then slide, then patch, then view."""

    def __init__(self, records: Sequence[BatchRecord], dims: Tuple[int, int, int, int]):
        self._records = tuple(records)
        self._dims = tuple(int(d) for d in dims)

    @property
    def records(self) -> Tuple[BatchRecord, ...]:
        return self._records

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return self._dims

    def __len__(self) -> int:
        return len(self._records)

    @property
    def patient_ids(self) -> List[str]:
        return [r.patient_id for r in self._records]

    @property
    def slide_ids(self) -> List[str]:
        return [r.slide_id for r in self._records]

    @property
    def patch_ids(self) -> List[str]:
        return [r.patch_id for r in self._records]

    def validate(self) -> 'BatchIndex':
        if len(self._dims) != 4 or any(d < 1 for d in self._dims):
            raise MalformedBatchError(f'Batch dims must be four positive integers, got {self._dims}')
        n, n_s, n_p, n_a = self._dims
        if len(self._records) != n * n_s * n_p * n_a:
            raise MalformedBatchError(
                f'Batch holds {len(self._records)} records, dims {self._dims} require {n * n_s * n_p * n_a}')
        for position, record in enumerate(self._records):
            if record.global_index != position:
                raise MalformedBatchError(f'Record at position {position} carries global_index {record.global_index}')
            if record.aug_id != position % n_a:
                raise MalformedBatchError(f'Record {position} has aug_id {record.aug_id}, expected {position % n_a}')

        self._check_blocks('patient', lambda r: r.patient_id, n_s * n_p * n_a)
        self._check_blocks('slide', lambda r: r.slide_id, n_p * n_a)
        self._check_blocks('patch', lambda r: r.patch_id, n_a)
        return self

    def _check_blocks(self, level: str, key, block: int):
        seen = set()
        for start in range(0, len(self._records), block):
            values = {key(r) for r in self._records[start:start + block]}
            if len(values) != 1:
                raise MalformedBatchError(f'{level} block starting at {start} mixes ids {sorted(values)}')
            (value,) = values
            if value in seen:
                raise MalformedBatchError(f'{level} id {value} appears in two separate blocks')
            seen.add(value)

    @staticmethod
    def from_ids(patient_ids: Sequence[str], slide_ids: Sequence[str], patch_ids: Sequence[str],
                 dims: Tuple[int, int, int, int]) -> 'BatchIndex':
        n_a = dims[3]
        rows = zip(patient_ids, slide_ids, patch_ids)
        records = [BatchRecord(i, p, s, q, i % n_a) for i, (p, s, q) in enumerate(rows)]
        return BatchIndex(records, dims)


def sample_batch(dataset: HierDataset, n: int, n_s: int, n_p: int, n_a: int, rng: np.random.Generator, *,
                 policy: Optional[AugmentationPolicy] = None, strength: float = 1.0,
                 split: Split = Split.TRAIN) -> Tuple[BatchIndex, np.ndarray]:
    """Draw n patients, n_s slides each and n_p patches per slide without replacement, with n_a views per patch.

    Each view is augmented from its own generator, seeded from one batch-level draw and its position.
    """
    policy = policy or AugmentationPolicy()
    patients = dataset.manifest.patients(split)
    if len(patients) < n:
        raise InsufficientHierarchyError(f'patient level: batch needs {n} patients, {split.value} split has '
                                         f'{len(patients)}')
    for patient in patients:
        if len(patient.slides) < n_s:
            raise InsufficientHierarchyError(f'slide level: batch needs {n_s} slides per patient, patient '
                                             f'{patient.patient_id} has {len(patient.slides)}')
        for slide in patient.slides:
            if len(slide.patches) < n_p:
                raise InsufficientHierarchyError(f'patch level: batch needs {n_p} patches per slide, slide '
                                                 f'{slide.slide_id} has {len(slide.patches)}')

    records = []
    for patient_pos in rng.choice(len(patients), size=n, replace=False):
        patient = patients[int(patient_pos)]
        for slide_pos in rng.choice(len(patient.slides), size=n_s, replace=False):
            slide = patient.slides[int(slide_pos)]
            for patch_pos in rng.choice(len(slide.patches), size=n_p, replace=False):
                patch_id = slide.patches[int(patch_pos)]
                for aug_id in range(n_a):
                    records.append(BatchRecord(len(records), patient.patient_id, slide.slide_id, patch_id, aug_id))

    batch_seed = int(rng.integers(0, 2 ** 63 - 1))
    images = np.stack([
        augment(dataset.image(r.patch_id), policy, strength, np.random.default_rng([batch_seed, r.global_index]))
        for r in records])
    return BatchIndex(records, (n, n_s, n_p, n_a)).validate(), images
