from dataclasses import dataclass

import numpy as np
import torch

from hsi.preprocessing import PatchExtractor


@dataclass
class SampleSet:
    """
    Coordinates bound to a patch extractor. ``labels`` are 1-based class ids,
    or None for the unlabeled pre-training pool.
    """
    extractor: PatchExtractor
    coords: np.ndarray
    labels: np.ndarray = None

    def __len__(self):
        return len(self.coords)

    @property
    def patch_size(self):
        return self.extractor.patch_size

    @property
    def bands(self):
        return self.extractor.bands

    def subset(self, indices):
        indices = np.asarray(indices)
        return SampleSet(
            extractor=self.extractor,
            coords=self.coords[indices],
            labels=None if self.labels is None else self.labels[indices],
        )

    def batch(self, indices, dtype=torch.float32):
        """
        Patches (n, S, S, B) and 0-based class targets (or None) for ``indices``.
        """
        indices = np.asarray(indices)
        patches = torch.from_numpy(self.extractor.patches(self.coords[indices])).to(dtype)
        targets = None
        if self.labels is not None:
            targets = torch.from_numpy(self.labels[indices].astype(np.int64) - 1)
        return patches, targets
