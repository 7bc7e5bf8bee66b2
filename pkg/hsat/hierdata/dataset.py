import hashlib
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from logzero import logger

from hsat.hierdata.manifest import (MANIFEST_FILE, HierarchyManifest, ManifestError, Split, patch_path,
                                    read_patch, write_patch)


@dataclass(frozen=True)
class PatchTable:
    """Flat view of one split: row i is one patch with its ancestors and label."""
    patch_ids: List[str]
    slide_ids: List[str]
    patient_ids: List[str]
    labels: np.ndarray
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.patch_ids)


class HierDataset:
    """A manifest plus every patch image, held in memory."""

    def __init__(self, manifest: HierarchyManifest, images: Dict[str, np.ndarray], directory: Optional[str] = None):
        missing = [patch_id for _, _, patch_id in manifest.iter_patches() if patch_id not in images]
        if missing:
            raise ManifestError(f'{len(missing)} patches missing from the image store, first: {missing[0]}')
        for patch_id, image in images.items():
            if image.shape != manifest.image_shape:
                raise ManifestError(f'Patch {patch_id} has shape {image.shape}, manifest declares '
                                    f'{manifest.image_shape}')
        self._manifest = manifest
        self._images = images
        self._directory = directory

    @property
    def manifest(self) -> HierarchyManifest:
        return self._manifest

    @property
    def directory(self) -> Optional[str]:
        return self._directory

    def image(self, patch_id: str) -> np.ndarray:
        return self._images[patch_id]

    def patch_table(self, split: Optional[Split] = None) -> PatchTable:
        self._manifest.check_disjoint_splits()
        rows = list(self._manifest.iter_patches(split))
        images = np.stack([self._images[patch_id] for _, _, patch_id in rows]) if rows \
            else np.zeros((0,) + self._manifest.image_shape)
        return PatchTable(
            patch_ids=[patch_id for _, _, patch_id in rows],
            slide_ids=[slide.slide_id for _, slide, _ in rows],
            patient_ids=[patient.patient_id for patient, _, _ in rows],
            labels=np.array([patient.label for patient, _, _ in rows], dtype=np.int64),
            images=images)

    def save(self, directory: str):
        os.makedirs(os.path.join(directory, 'patches'), exist_ok=True)
        for _, _, patch_id in self._manifest.iter_patches():
            write_patch(patch_path(directory, patch_id), self._images[patch_id])
        self._manifest.save(directory)
        self._directory = directory
        logger.info(f'Wrote {len(self._images)} patches to {directory}')

    @staticmethod
    def load(directory: str) -> 'HierDataset':
        manifest = HierarchyManifest.load(directory)
        images = {patch_id: read_patch(patch_path(directory, patch_id))
                  for _, _, patch_id in manifest.iter_patches()}
        logger.info(f'Loaded {len(manifest.patients())} patients and {len(images)} patches from {directory}')
        return HierDataset(manifest, images, directory)


def dataset_hash(directory: str) -> str:
    """sha256 over the manifest and every patch file, in manifest order."""
    manifest = HierarchyManifest.load(directory)
    digest = hashlib.sha256()
    with open(os.path.join(directory, MANIFEST_FILE), 'rb') as fp:
        digest.update(fp.read())
    for _, _, patch_id in manifest.iter_patches():
        with open(patch_path(directory, patch_id), 'rb') as fp:
            digest.update(fp.read())
    return digest.hexdigest()
