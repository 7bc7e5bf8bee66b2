from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from sklearn.preprocessing import normalize

from hsat.exceptions import ConfigurationError, DataError, NumericError


class EmptyBankError(DataError):
    pass


class UnknownIdError(DataError):
    pass


class KnnConfigError(ConfigurationError):
    pass


class BankNormError(NumericError):
    pass


def normalize_rows(x: np.ndarray) -> np.ndarray:
    return normalize(np.asarray(x, dtype=np.float64).reshape(len(x), -1))


class EmbeddingBank:
    """Unit-norm train embeddings with labels and, when known, the slide and patient of every row."""

    def __init__(self, embeddings: np.ndarray, labels: Sequence[int], *, classes: int,
                 slide_ids: Optional[Sequence[str]] = None, patient_ids: Optional[Sequence[str]] = None,
                 source: Optional[str] = None):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] == 0:
            raise EmptyBankError(f'EmbeddingBank: no train embeddings (shape {embeddings.shape})')
        norms = np.linalg.norm(embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise BankNormError(f'EmbeddingBank: rows must be unit-norm, got norms in [{norms.min()}, {norms.max()}]')
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (embeddings.shape[0],):
            raise EmptyBankError(f'EmbeddingBank: {labels.shape[0]} labels for {embeddings.shape[0]} rows')
        if labels.min() < 0 or labels.max() >= classes:
            raise UnknownIdError(f'EmbeddingBank: labels outside [0, {classes})')
        self.embeddings = embeddings
        self.labels = labels
        self.classes = classes
        self.slide_ids = list(slide_ids) if slide_ids is not None else None
        self.patient_ids = list(patient_ids) if patient_ids is not None else None
        self.source = source

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class KnnResult:
    predictions: np.ndarray
    votes: np.ndarray


def knn_predict(bank: EmbeddingBank, queries: np.ndarray, k: int) -> KnnResult:
    """Cosine kNN with similarity-weighted votes.

    Neighbours with equal similarity are taken in bank order, and the predicted class is
    the smallest class index among those with the largest vote.
    """
    if bank is None or len(bank) == 0:
        raise EmptyBankError('knn_predict: empty bank')
    if not 1 <= k <= len(bank):
        raise KnnConfigError(f'eval.k: must lie in [1, {len(bank)}], got {k}')
    queries = np.asarray(queries, dtype=np.float64)
    similarities = queries @ bank.embeddings.T
    order = np.argsort(-similarities, axis=1, kind='stable')[:, :k]
    weights = np.take_along_axis(similarities, order, axis=1)
    votes = np.zeros((queries.shape[0], bank.classes))
    rows = np.repeat(np.arange(queries.shape[0]), k)
    np.add.at(votes, (rows, bank.labels[order].reshape(-1)), weights.reshape(-1))
    return KnnResult(predictions=np.argmax(votes, axis=1), votes=votes)


def aggregate(votes: np.ndarray, group_ids: Sequence[str],
              is_known: Optional[Callable[[str], bool]] = None) -> Dict[str, int]:
    """Argmax of the mean vote vector per group (slide or patient), same tie rule as knn_predict."""
    votes = np.asarray(votes, dtype=np.float64)
    group_ids = list(group_ids)
    if len(group_ids) != votes.shape[0]:
        raise UnknownIdError(f'aggregate: {len(group_ids)} ids for {votes.shape[0]} vote rows')
    if is_known is not None:
        unknown = sorted({g for g in group_ids if not is_known(g)})
        if unknown:
            raise UnknownIdError(f'aggregate: ids absent from manifest: {unknown}')
    groups: Dict[str, list] = {}
    for row, group in enumerate(group_ids):
        groups.setdefault(group, []).append(row)
    return {group: int(np.argmax(votes[rows].mean(axis=0))) for group, rows in groups.items()}
