from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score, balanced_accuracy_score

from hsat.exceptions import DataError


class MetricsError(DataError):
    pass


def metrics(predictions: Sequence[int], labels: Sequence[int]) -> Tuple[float, float]:
    """(Acc, MCA) in percent; MCA is the unweighted mean recall over the classes present in labels."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or labels.size == 0:
        raise MetricsError('metrics: empty predictions or labels')
    if predictions.shape != labels.shape:
        raise MetricsError(f'metrics: {predictions.shape[0]} predictions for {labels.shape[0]} labels')
    acc = 100.0 * accuracy_score(labels, predictions)
    mca = 100.0 * balanced_accuracy_score(labels, predictions)
    return float(acc), float(mca)
