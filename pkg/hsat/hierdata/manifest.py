import json
import os
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from hsat.exceptions import DataError

MANIFEST_FILE = 'manifest.json'
PATCH_DIR = 'patches'


class ManifestError(DataError):
    pass


class Split(Enum):
    TRAIN = 'train'
    VAL = 'val'


@dataclass(frozen=True)
class Slide:
    slide_id: str
    patches: Tuple[str, ...]


@dataclass(frozen=True)
class Patient:
    patient_id: str
    label: int
    split: Split
    slides: Tuple[Slide, ...]


class HierarchyManifest:
    """patient -> slide -> patch structure with one class label and one split per patient."""

    def __init__(self, *, patients: Sequence[Patient], classes: int,
                 image_shape: Tuple[int, int, int], generator: Optional[dict] = None, seed: Optional[int] = None):
        self._patients = tuple(patients)
        self._classes = classes
        self._image_shape = tuple(image_shape)
        self._generator = dict(generator) if generator else {}
        self._seed = seed
        self._by_patient = {p.patient_id: p for p in self._patients}
        self._slide_owner = {s.slide_id: p.patient_id for p in self._patients for s in p.slides}
        self.validate()

    def validate(self) -> 'HierarchyManifest':
        if len(self._by_patient) != len(self._patients):
            raise ManifestError('Duplicate patient ids in manifest')
        slide_ids = [s.slide_id for p in self._patients for s in p.slides]
        if len(set(slide_ids)) != len(slide_ids):
            raise ManifestError('A slide id appears under more than one patient')
        patch_ids = [q for p in self._patients for s in p.slides for q in s.patches]
        if len(set(patch_ids)) != len(patch_ids):
            raise ManifestError('A patch id appears under more than one slide')
        for patient in self._patients:
            if not 0 <= patient.label < self._classes:
                raise ManifestError(f'Patient {patient.patient_id} has label {patient.label} '
                                    f'outside [0, {self._classes})')
            for slide in patient.slides:
                if not slide.patches:
                    raise ManifestError(f'Slide {slide.slide_id} has no patches')
        self.check_disjoint_splits()
        return self

    def check_disjoint_splits(self):
        train = {p.patient_id for p in self.patients(Split.TRAIN)}
        val = {p.patient_id for p in self.patients(Split.VAL)}
        overlap = train & val
        if overlap:
            raise ManifestError(f'Patients present in both train and val splits: {sorted(overlap)}')

    @property
    def classes(self) -> int:
        return self._classes

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self._image_shape

    @property
    def generator(self) -> dict:
        return dict(self._generator)

    @property
    def seed(self) -> Optional[int]:
        return self._seed

    def patients(self, split: Optional[Split] = None) -> List[Patient]:
        return [p for p in self._patients if split is None or p.split == split]

    def patient(self, patient_id: str) -> Patient:
        try:
            return self._by_patient[patient_id]
        except KeyError:
            raise ManifestError(f'Unknown patient id: {patient_id}')

    def owner_of_slide(self, slide_id: str) -> str:
        try:
            return self._slide_owner[slide_id]
        except KeyError:
            raise ManifestError(f'Unknown slide id: {slide_id}')

    def has_slide(self, slide_id: str) -> bool:
        return slide_id in self._slide_owner

    def has_patient(self, patient_id: str) -> bool:
        return patient_id in self._by_patient

    def iter_patches(self, split: Optional[Split] = None) -> Iterator[Tuple[Patient, Slide, str]]:
        for patient in self.patients(split):
            for slide in patient.slides:
                for patch_id in slide.patches:
                    yield patient, slide, patch_id

    def to_json(self) -> dict:
        return {
            'classes': self._classes,
            'image_shape': list(self._image_shape),
            'seed': self._seed,
            'generator': self._generator,
            'patients': [{
                'patient_id': p.patient_id,
                'label': p.label,
                'split': p.split.value,
                'slides': [{'slide_id': s.slide_id, 'patches': list(s.patches)} for s in p.slides],
            } for p in self._patients],
        }

    @staticmethod
    def from_json(property_values: dict) -> 'HierarchyManifest':
        try:
            patients = [
                Patient(patient_id=p['patient_id'], label=int(p['label']), split=Split(p['split']),
                        slides=tuple(Slide(slide_id=s['slide_id'], patches=tuple(s['patches'])) for s in p['slides']))
                for p in property_values['patients']]
            return HierarchyManifest(
                patients=patients,
                classes=int(property_values['classes']),
                image_shape=tuple(property_values['image_shape']),
                generator=property_values.get('generator'),
                seed=property_values.get('seed'))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f'Malformed manifest: {e}')

    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, MANIFEST_FILE)
        with open(f'{path}.tmp', 'w') as fp:
            json.dump(self.to_json(), fp, indent=2, sort_keys=True)
        os.replace(f'{path}.tmp', path)

    @staticmethod
    def load(directory: str) -> 'HierarchyManifest':
        path = os.path.join(directory, MANIFEST_FILE)
        try:
            with open(path) as fp:
                return HierarchyManifest.from_json(json.load(fp))
        except OSError as e:
            raise ManifestError(f'Cannot read manifest {path}: {e}')
        except json.JSONDecodeError as e:
            raise ManifestError(f'Manifest {path} is not valid JSON: {e}')


def patch_path(directory: str, patch_id: str) -> str:
    return os.path.join(directory, PATCH_DIR, f'{patch_id}.bin')


def write_patch(path: str, image: np.ndarray):
    image = np.asarray(image, dtype='<f8')
    with open(path, 'wb') as fp:
        fp.write(struct.pack(f'<B{image.ndim}I', image.ndim, *image.shape))
        fp.write(image.tobytes())


def read_patch(path: str) -> np.ndarray:
    try:
        with open(path, 'rb') as fp:
            payload = fp.read()
    except OSError as e:
        raise ManifestError(f'Cannot read patch {path}: {e}')
    if not payload:
        raise ManifestError(f'Empty patch file {path}')
    ndim = payload[0]
    offset = 1 + 4 * ndim
    if len(payload) < offset:
        raise ManifestError(f'Truncated patch header in {path}')
    shape = struct.unpack(f'<{ndim}I', payload[1:offset])
    if len(payload) != offset + 8 * int(np.prod(shape)):
        raise ManifestError(f'Patch {path} does not hold {shape} float64 values')
    return np.frombuffer(payload, dtype='<f8', offset=offset).astype(np.float64).reshape(shape)


def index_by_patch(manifest: HierarchyManifest) -> Dict[str, Tuple[str, str, int]]:
    return {patch_id: (slide.slide_id, patient.patient_id, patient.label)
            for patient, slide, patch_id in manifest.iter_patches()}
