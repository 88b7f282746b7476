import numpy as np
import pytest
import torch

from core.exceptions import ConfigError, ShapeMismatchError
from hsi.models import Sample
from tokenizer.embedding import INIT_STD, TokenEmbedding, embed
from tokenizer.tokens import (
    RawTokens,
    band_group_index,
    reassemble_spatial,
    token_layout,
    tokenize,
    tokenize_joint,
    tokenize_spatial,
    tokenize_spectral,
)


def make_sample(size=7, bands=200, seed=0):
    rng = np.random.default_rng(seed)
    return Sample(patch=rng.random((size, size, bands)).astype(np.float32), center=(0, 0))


def reflect(index, bands):
    if index < 0:
        return -index
    if index >= bands:
        return 2 * (bands - 1) - index
    return index


class TestSpectral:
    def test_one_band_per_token(self):
        sample = make_sample()
        raw = tokenize_spectral(sample)
        assert (raw.num_tokens, raw.token_dim) == (200, 49)
        np.testing.assert_array_equal(raw.tokens[17].numpy(), sample.patch[:, :, 17].ravel())

    def test_single_pixel_window(self):
        sample = make_sample(size=1, bands=3)
        raw = tokenize_spectral(sample)
        assert raw.tokens.shape == (3, 1)
        np.testing.assert_array_equal(raw.tokens[:, 0].numpy(), sample.patch[0, 0])

    def test_band_grouping_reflects_at_the_ends(self):
        sample = make_sample()
        raw = tokenize_spectral(sample, group=3)
        assert raw.tokens.shape == (200, 147)
        for band in (0, 1, 100, 199):
            neighbours = [reflect(band + offset, 200) for offset in (-1, 0, 1)]
            expected = np.concatenate([sample.patch[:, :, j].ravel() for j in neighbours])
            np.testing.assert_array_equal(raw.tokens[band].numpy(), expected)

    def test_group_index(self):
        assert band_group_index(5, 3).tolist() == [[1, 0, 1], [0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4, 3]]
        with pytest.raises(ConfigError):
            band_group_index(5, 0)


class TestSpatial:
    def test_one_pixel_per_token(self):
        sample = make_sample()
        raw = tokenize_spatial(sample)
        assert (raw.num_tokens, raw.token_dim) == (49, 200)
        np.testing.assert_array_equal(raw.tokens[7 * 2 + 5].numpy(), sample.patch[2, 5])

    def test_center_pixel_only(self):
        sample = make_sample(size=1, bands=6)
        np.testing.assert_array_equal(tokenize_spatial(sample).tokens.numpy(), sample.patch[0])

    def test_reassemble(self):
        sample = make_sample(size=5, bands=4)
        tokens = tokenize_spatial(sample).tokens
        np.testing.assert_array_equal(reassemble_spatial(tokens, 5).numpy(), sample.patch)


class TestJoint:
    def test_group_of_ten(self):
        raw = tokenize_joint(make_sample(), 10)
        assert (raw.num_tokens, raw.token_dim) == (980, 10)

    def test_whole_spectrum_groups_equal_spatial_tokens(self):
        sample = make_sample(size=3, bands=8)
        torch.testing.assert_close(tokenize_joint(sample, 8).tokens, tokenize_spatial(sample).tokens)

    def test_scalar_tokens(self):
        sample = make_sample(size=1, bands=4)
        raw = tokenize_joint(sample, 1)
        assert raw.tokens.shape == (4, 1)

    def test_pixel_major_order_with_zero_padding(self):
        sample = make_sample(size=2, bands=7)
        tokens = tokenize_joint(sample, 3).tokens
        assert tokens.shape == (4 * 3, 3)
        # pixel (0, 1), third group holds band 6 then two zeros
        np.testing.assert_array_equal(tokens[1 * 3 + 2].numpy(), [sample.patch[0, 1, 6], 0.0, 0.0])
        assert tokens.sum().item() == pytest.approx(float(sample.patch.sum()), rel=1e-5)


@pytest.mark.parametrize('mode, group', [('spectral', 1), ('spectral', 3), ('spatial', 1), ('joint', 4)])
def test_layout_matches_tokens(mode, group):
    patches = torch.rand(2, 5, 5, 9)
    tokens = tokenize(patches, mode, group)
    assert tuple(tokens.shape[1:]) == token_layout(mode, 5, 9, group)


def test_tokens_partition_the_patch():
    sample = make_sample(size=3, bands=5)
    values = np.sort(sample.patch.ravel())
    for raw in (tokenize_spectral(sample), tokenize_spatial(sample)):
        np.testing.assert_array_equal(np.sort(raw.tokens.numpy().ravel()), values)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        token_layout('temporal', 5, 5)


class TestEmbedding:
    def test_initialization(self):
        torch.manual_seed(0)
        embedding = TokenEmbedding(10, 6, 8)
        assert (embedding.cls_token == 0).all()
        assert (embedding.projection.bias == 0).all()
        assert embedding.pos_embed.abs().max() <= 2 * INIT_STD
        assert embedding.projection.weight.abs().max() <= 2 * INIT_STD

    def test_zero_projection_leaves_positions(self):
        embedding = TokenEmbedding(4, 3, 5)
        with torch.no_grad():
            embedding.projection.weight.zero_()
        out = embed(RawTokens(torch.rand(4, 3), 'spatial'), embedding)
        assert out.shape == (5, 5)
        assert (out[0] == 0).all()
        torch.testing.assert_close(out[1:], embedding.pos_embed.detach())

    def test_identity_projection(self):
        embedding = TokenEmbedding(3, 4, 4)
        with torch.no_grad():
            embedding.projection.weight.copy_(torch.eye(4))
            embedding.pos_embed.zero_()
        tokens = torch.rand(3, 4)
        torch.testing.assert_close(embed(RawTokens(tokens, 'spatial'), embedding)[1:], tokens)

    def test_matches_dense_oracle(self):
        torch.manual_seed(1)
        embedding = TokenEmbedding(6, 5, 4)
        tokens = torch.rand(2, 6, 5)
        expected = tokens @ embedding.projection.weight.T + embedding.projection.bias + embedding.pos_embed
        out = embedding(tokens)
        torch.testing.assert_close(out[:, 1:], expected, atol=1e-6, rtol=0)
        torch.testing.assert_close(out[:, 0], embedding.cls_token.expand(2, 4))

    def test_affine(self):
        embedding = TokenEmbedding(6, 5, 4).double()
        tokens = torch.rand(1, 6, 5, dtype=torch.float64)
        base = embedding(torch.zeros_like(tokens))
        delta = embedding(tokens) - base
        torch.testing.assert_close(embedding(2.5 * tokens) - base, 2.5 * delta, atol=1e-6, rtol=0)

    def test_positions_select_rows(self):
        embedding = TokenEmbedding(6, 5, 4)
        tokens = torch.rand(1, 2, 5)
        positions = torch.tensor([[4, 1]])
        out = embedding(tokens, positions)
        expected = embedding.projection(tokens) + embedding.pos_embed[positions]
        torch.testing.assert_close(out[:, 1:], expected)

    def test_shape_mismatch(self):
        embedding = TokenEmbedding(6, 5, 4)
        with pytest.raises(ShapeMismatchError):
            embedding(torch.rand(1, 6, 3))
        with pytest.raises(ShapeMismatchError):
            embedding(torch.rand(1, 5, 5))
