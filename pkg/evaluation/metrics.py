from dataclasses import dataclass

import numpy as np

from core.exceptions import ConfigError, LabelError, ShapeMismatchError


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted; class c sits at index c - 1."""
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeMismatchError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ConfigError("confusion matrix entries must be >= 0")

    @classmethod
    def empty(cls, classes):
        return cls(np.zeros((classes, classes), dtype=np.int64))

    @classmethod
    def from_predictions(cls, truth, predicted, classes):
        """Accumulate 1-based labels; order of the pairs never matters."""
        truth = np.asarray(truth, dtype=np.int64).ravel()
        predicted = np.asarray(predicted, dtype=np.int64).ravel()
        if truth.shape != predicted.shape:
            raise ShapeMismatchError(f"{truth.size} labels vs {predicted.size} predictions")
        for name, values in (('true', truth), ('predicted', predicted)):
            if values.size and (values.min() < 1 or values.max() > classes):
                raise LabelError(f"{name} labels must lie in [1, {classes}]")
        flat = np.bincount((truth - 1) * classes + (predicted - 1), minlength=classes * classes)
        return cls(flat.reshape(classes, classes))

    @property
    def classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def merge(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        if other.classes != self.classes:
            raise ShapeMismatchError(f"cannot merge {self.classes}- and {other.classes}-class matrices")
        return ConfusionMatrix(self.counts + other.counts)

    def __add__(self, other):
        return self.merge(other)


@dataclass
class Metrics:
    overall_accuracy: float
    average_accuracy: float
    kappa: float
    per_class: np.ndarray

    def to_dict(self):
        return {
            'OA': self.overall_accuracy,
            'AA': self.average_accuracy,
            'kappa': self.kappa,
            'per_class': [float(value) for value in self.per_class],
        }


def metrics(cm: ConfusionMatrix) -> Metrics:
    """
    OA, AA over classes with a non-empty row, and Cohen's kappa from the
    marginals, all in float64.
    """
    total = cm.total
    if total == 0:
        raise ConfigError("metrics of an empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    diagonal = np.diag(counts)

    per_class = np.divide(diagonal, rows, out=np.zeros_like(diagonal), where=rows > 0)
    observed = diagonal.sum() / total
    expected = float((rows * cols).sum()) / (float(total) * float(total))
    # all mass on one class in both truth and predictions
    kappa = 1.0 if expected == 1.0 else (observed - expected) / (1.0 - expected)
    return Metrics(
        overall_accuracy=float(observed),
        average_accuracy=float(per_class[rows > 0].mean()),
        kappa=float(kappa),
        per_class=per_class,
    )
