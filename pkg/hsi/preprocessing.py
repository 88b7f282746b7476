import numpy as np

from core.exceptions import ConfigError, ShapeMismatchError
from hsi.models import HsiCube, Sample


def normalize(cube: HsiCube) -> HsiCube:
    """
    Per-band min-max scaling over the whole scene. Constant bands map to 0.
    """
    data = cube.data.astype(np.float64)
    low = data.min(axis=(0, 1), keepdims=True)
    span = data.max(axis=(0, 1), keepdims=True) - low
    scaled = np.divide(data - low, span, out=np.zeros_like(data), where=span > 0)
    return HsiCube(np.clip(scaled, 0.0, 1.0).astype(np.float32), name=cube.name)


def check_patch_size(patch_size: int, height: int, width: int):
    if patch_size < 1 or patch_size % 2 == 0:
        raise ConfigError(f"patch size must be a positive odd integer, got {patch_size}")
    if patch_size > 2 * min(height, width) - 1:
        raise ConfigError(
            f"patch size {patch_size} exceeds 2*min(H, W) - 1 = {2 * min(height, width) - 1}"
        )


class PatchExtractor:
    """
    Cuts S x S x B windows from a normalized cube.

    The cube is reflect-padded once (mirror across the border without
    repeating the border pixel), so every window is a plain slice.
    """

    def __init__(self, cube: HsiCube, patch_size: int):
        check_patch_size(patch_size, cube.height, cube.width)
        self.cube = cube
        self.patch_size = patch_size
        self.radius = patch_size // 2
        r = self.radius
        self.padded = np.pad(cube.data, ((r, r), (r, r), (0, 0)), mode='reflect')

    @property
    def bands(self):
        return self.cube.bands

    def _check_centers(self, centers):
        rows, cols = centers[:, 0], centers[:, 1]
        if (rows < 0).any() or (cols < 0).any() or (rows >= self.cube.height).any() or (cols >= self.cube.width).any():
            raise ShapeMismatchError(f"center outside the {self.cube.height}x{self.cube.width} image")

    def extract(self, center, label=None) -> Sample:
        row, col = map(int, center)
        self._check_centers(np.array([[row, col]]))
        s = self.patch_size
        patch = self.padded[row:row + s, col:col + s, :].copy()
        return Sample(patch=patch, center=(row, col), label=label)

    def patches(self, centers) -> np.ndarray:
        """Vectorized extraction: (n, 2) centers -> (n, S, S, B)."""
        centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
        self._check_centers(centers)
        offsets = np.arange(self.patch_size)
        rows = centers[:, 0, None, None] + offsets[None, :, None]
        cols = centers[:, 1, None, None] + offsets[None, None, :]
        return self.padded[rows, cols, :]


def extract_sample(cube: HsiCube, center, patch_size: int, label=None) -> Sample:
    return PatchExtractor(cube, patch_size).extract(center, label=label)


def stratified_fraction(coords, labels, fraction: float, rng: np.random.Generator):
    """
    Keep ``fraction`` of the samples of every class (at least one per class).
    Returns the kept (coords, labels) in their original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"data fraction must lie in (0, 1], got {fraction}")
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    keep = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        count = max(1, int(np.floor(fraction * len(members) + 0.5)))
        keep.append(rng.choice(members, size=count, replace=False))
    kept = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return coords[kept], labels[kept]
