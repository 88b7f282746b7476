"""
Generated scenes for smoke runs and tests.
"""

from dataclasses import dataclass

import numpy as np

from hsi.models import HsiCube, LabelField


@dataclass
class SyntheticScene:
    cube: HsiCube
    labels: LabelField
    train_by_class: dict


def _smooth_spectra(rng, count, bands):
    """Sums of Gaussian bumps, scaled into [0.1, 0.9]."""
    grid = np.linspace(0.0, 1.0, bands)
    spectra = np.zeros((count, bands))
    for row in spectra:
        for _ in range(3):
            center, width, height = rng.uniform(0, 1), rng.uniform(0.08, 0.3), rng.uniform(0.3, 1.0)
            row += height * np.exp(-0.5 * ((grid - center) / width) ** 2)
    low = spectra.min(axis=1, keepdims=True)
    high = spectra.max(axis=1, keepdims=True)
    return 0.1 + 0.8 * (spectra - low) / np.maximum(high - low, 1e-9)


def make_synthetic_scene(classes=3, bands=16, size=32, noise=0.02, unlabeled_fraction=0.3,
                         train_per_class=20, seed=0) -> SyntheticScene:
    """
    Vertical class stripes, each pixel its class spectrum plus Gaussian noise.
    A random ``unlabeled_fraction`` of pixels is labeled 0 so the scene has a
    pre-training pool; ``train_per_class`` labeled pixels per class form the
    train split.
    """
    rng = np.random.default_rng(seed)
    spectra = _smooth_spectra(rng, classes, bands)

    columns = np.arange(size) * classes // size + 1
    truth = np.broadcast_to(columns, (size, size)).copy()
    data = spectra[truth - 1] + noise * rng.standard_normal((size, size, bands))

    labels = truth.copy()
    labels[rng.random((size, size)) < unlabeled_fraction] = 0

    train_by_class = {}
    for cls in range(1, classes + 1):
        members = np.argwhere(labels == cls)
        take = min(train_per_class, len(members))
        chosen = members[np.sort(rng.choice(len(members), size=take, replace=False))]
        train_by_class[cls] = [tuple(map(int, rc)) for rc in chosen]

    return SyntheticScene(
        cube=HsiCube(data.astype(np.float32), name='synthetic'),
        labels=LabelField(labels, class_names=[f"class_{c}" for c in range(1, classes + 1)]),
        train_by_class=train_by_class,
    )


def make_low_rank_cube(size=16, bands=16, rank=2, seed=0) -> HsiCube:
    """
    Spatially smooth abundances mixing ``rank`` endmember spectra, so masked
    bands and masked pixels are both predictable from what stays visible.
    """
    rng = np.random.default_rng(seed)
    endmembers = _smooth_spectra(rng, rank, bands)
    rows, cols = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing='ij')
    abundances = np.stack([
        0.5 + 0.5 * np.sin(2 * np.pi * (rng.uniform(0.3, 1.0) * rows + rng.uniform(0.3, 1.0) * cols) + rng.uniform(0, np.pi))
        for _ in range(rank)
    ], axis=-1)
    abundances /= np.maximum(abundances.sum(axis=-1, keepdims=True), 1e-9)
    data = abundances @ endmembers
    return HsiCube(data.astype(np.float32), name='low_rank')
