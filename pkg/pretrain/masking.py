import math
from dataclasses import dataclass

import numpy as np
import torch

from core.exceptions import ConfigError


def masked_count(num_tokens: int, ratio: float) -> int:
    """round(ratio * N), halves rounded up."""
    return int(math.floor(ratio * num_tokens + 0.5))


@dataclass(frozen=True, eq=False)
class MaskPlan:
    """
    Sorted 0-based patch-token indices to hide from the encoder. CLS is
    never part of a plan.
    """
    masked: np.ndarray
    num_tokens: int
    ratio: float

    @property
    def visible(self):
        return np.setdiff1d(np.arange(self.num_tokens), self.masked, assume_unique=True)

    def __len__(self):
        return len(self.masked)


def sample_mask(num_tokens: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniform sample without replacement of exactly round(ratio * N) indices."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"masking ratio must lie strictly between 0 and 1, got {ratio}")
    if num_tokens < 2:
        raise ConfigError(f"masking needs at least 2 tokens, got {num_tokens}")
    count = masked_count(num_tokens, ratio)
    if count == 0 or count == num_tokens:
        raise ConfigError(f"ratio {ratio} masks {count} of {num_tokens} tokens; need at least one masked and one visible")
    masked = np.sort(rng.choice(num_tokens, size=count, replace=False))
    return MaskPlan(masked=masked, num_tokens=num_tokens, ratio=ratio)


def stack_plans(plans):
    """(masked, visible) index tensors of shape (B, k) and (B, N - k)."""
    masked = torch.from_numpy(np.stack([plan.masked for plan in plans]).astype(np.int64))
    visible = torch.from_numpy(np.stack([plan.visible for plan in plans]).astype(np.int64))
    return masked, visible
