from dataclasses import dataclass, field

import numpy as np

from core.exceptions import DataFormatError, LabelError


@dataclass
class HsiCube:
    """
    H x W x B reflectance volume, stored as 32-bit floats with bands innermost.
    """
    data: np.ndarray
    name: str = ''

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DataFormatError(f"cube must be H x W x B with every axis >= 1, got {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if not np.isfinite(self.data).all():
            raise DataFormatError(f"cube {self.name!r} contains non-finite values")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


@dataclass
class LabelField:
    """Per-pixel class ids: 0 is unlabeled, 1..C are classes."""
    labels: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise DataFormatError(f"label field must be H x W, got {self.labels.shape}")
        self.labels = self.labels.astype(np.int64)
        if not self.class_names:
            top = int(self.labels.max()) if self.labels.size else 0
            self.class_names = [f"class_{c}" for c in range(1, top + 1)]
        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise LabelError(
                f"labels must lie in [0, {self.num_classes}], "
                f"found [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def shape(self):
        return self.labels.shape

    def check_matches(self, cube: HsiCube):
        if self.labels.shape != cube.data.shape[:2]:
            raise DataFormatError(
                f"label field {self.labels.shape} does not match cube {cube.data.shape[:2]}"
            )


@dataclass
class SplitSpec:
    """
    Fixed partition of a scene. Coordinates are (row, col) int arrays of
    shape (n, 2); train/test labels are 1-based.
    """
    train: np.ndarray
    train_labels: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray
    pretrain: np.ndarray

    def counts(self):
        return {'pretrain': len(self.pretrain), 'train': len(self.train), 'test': len(self.test)}

    def per_class_counts(self, num_classes):
        train = np.bincount(self.train_labels, minlength=num_classes + 1)[1:]
        test = np.bincount(self.test_labels, minlength=num_classes + 1)[1:]
        return train, test


@dataclass
class Sample:
    patch: np.ndarray
    center: tuple
    label: int = None

    @property
    def patch_size(self):
        return self.patch.shape[0]

    @property
    def bands(self):
        return self.patch.shape[2]
