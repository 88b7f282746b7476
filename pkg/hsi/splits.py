import logging

import numpy as np

from core.exceptions import LabelError
from hsi.io import load_split_file
from hsi.models import LabelField, SplitSpec

logger = logging.getLogger(__name__)


def _coords_of(mask):
    return np.argwhere(mask).astype(np.int64).reshape(-1, 2)


def enumerate_splits(labels: LabelField, split_file=None) -> SplitSpec:
    """
    Build the train / test / pretrain partition of a scene.

    Train coordinates come from ``split_file``; test is every labeled pixel
    not in train (all labeled pixels when no split file is given); pretrain
    is every unlabeled pixel. Coordinates are returned in row-major order.
    """
    field = labels.labels
    height, width = field.shape
    train_mask = np.zeros_like(field, dtype=bool)

    if split_file is not None:
        for cls, coords in load_split_file(split_file).items():
            for row, col in coords:
                if not (0 <= row < height and 0 <= col < width):
                    raise LabelError(f"split coordinate {(row, col)} is outside the {height}x{width} scene")
                if field[row, col] == 0:
                    raise LabelError(f"split coordinate {(row, col)} has label 0")
                if field[row, col] != cls:
                    raise LabelError(
                        f"split coordinate {(row, col)} listed under class {cls} but labeled {field[row, col]}"
                    )
                if train_mask[row, col]:
                    raise LabelError(f"duplicate split coordinate {(row, col)}")
                train_mask[row, col] = True

    labeled = field > 0
    train = _coords_of(train_mask)
    test = _coords_of(labeled & ~train_mask)
    pretrain = _coords_of(~labeled)

    split = SplitSpec(
        train=train,
        train_labels=field[train[:, 0], train[:, 1]],
        test=test,
        test_labels=field[test[:, 0], test[:, 1]],
        pretrain=pretrain,
    )
    logger.info("Split: %s", split.counts())
    return split
