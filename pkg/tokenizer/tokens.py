"""
Token layouts for one S x S x B sample (or a batch of them).

spectral  N = B tokens of dim g*S^2   (band i with its g-1 neighbours)
spatial   N = S^2 tokens of dim B     (one pixel spectrum, row-major)
joint     N = S^2*ceil(B/k) tokens of dim k  (pixel-major, then band group)
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from core.exceptions import ConfigError
from hsi.models import Sample

MODES = ('spectral', 'spatial', 'joint')


@dataclass
class RawTokens:
    tokens: torch.Tensor
    mode: str

    @property
    def num_tokens(self):
        return self.tokens.shape[-2]

    @property
    def token_dim(self):
        return self.tokens.shape[-1]


def check_mode(mode):
    if mode not in MODES:
        raise ConfigError(f"unknown token mode {mode!r}; expected one of {MODES}")


def band_group_index(bands: int, group: int) -> np.ndarray:
    """(bands, group) band indices; neighbours past either end are reflected."""
    if group < 1:
        raise ConfigError(f"band group must be >= 1, got {group}")
    padded = np.pad(np.arange(bands), ((group - 1) // 2, group // 2), mode='reflect')
    return np.lib.stride_tricks.sliding_window_view(padded, group).copy()


def token_layout(mode: str, patch_size: int, bands: int, group: int = 1):
    """(N, token_dim) for a mode; ``group`` is g for spectral and k for joint."""
    check_mode(mode)
    pixels = patch_size * patch_size
    if mode == 'spectral':
        return bands, group * pixels
    if mode == 'spatial':
        return pixels, bands
    return pixels * math.ceil(bands / group), group


def spectral_tokens(patches: torch.Tensor, group: int = 1) -> torch.Tensor:
    tokens = patches.movedim(-1, -3).flatten(-2)
    if group > 1:
        index = torch.from_numpy(band_group_index(patches.shape[-1], group))
        tokens = tokens[..., index, :].flatten(-2)
    return tokens


def spatial_tokens(patches: torch.Tensor) -> torch.Tensor:
    return patches.flatten(-3, -2)


def joint_tokens(patches: torch.Tensor, group: int) -> torch.Tensor:
    if group < 1:
        raise ConfigError(f"joint group length k must be >= 1, got {group}")
    pixels = spatial_tokens(patches)
    bands = pixels.shape[-1]
    groups = math.ceil(bands / group)
    pixels = F.pad(pixels, (0, groups * group - bands))
    return pixels.unflatten(-1, (groups, group)).flatten(-3, -2)


def tokenize(patches: torch.Tensor, mode: str, group: int = 1) -> torch.Tensor:
    """Batched entry point: (..., S, S, B) -> (..., N, token_dim)."""
    check_mode(mode)
    if mode == 'spectral':
        return spectral_tokens(patches, group)
    if mode == 'spatial':
        return spatial_tokens(patches)
    return joint_tokens(patches, group)


def reassemble_spatial(tokens: torch.Tensor, patch_size: int) -> torch.Tensor:
    return tokens.unflatten(-2, (patch_size, patch_size))


def _patch(sample: Sample) -> torch.Tensor:
    return torch.as_tensor(sample.patch)


def tokenize_spectral(sample: Sample, group: int = 1) -> RawTokens:
    return RawTokens(spectral_tokens(_patch(sample), group), 'spectral')


def tokenize_spatial(sample: Sample) -> RawTokens:
    return RawTokens(spatial_tokens(_patch(sample)), 'spatial')


def tokenize_joint(sample: Sample, k: int) -> RawTokens:
    return RawTokens(joint_tokens(_patch(sample), k), 'joint')
