"""
Masked-token reconstruction: encode the visible tokens, put the latents
back at their positions, fill every masked position with the shared mask
token plus that position's positional embedding, and decode the masked
positions with a single linear layer.
"""

import numpy as np
import torch
import torch.nn as nn

from core.exceptions import ConfigError, ShapeMismatchError
from pretrain.masking import MaskPlan, stack_plans
from tokenizer.embedding import trunc_normal_
from tokenizer.tokens import RawTokens
from transformer.encoder import Encoder
from transformer.layers import EncoderBlock, init_linear


class LinearDecoder(nn.Module):
    def __init__(self, emb: int, token_dim: int, heads: int = 1, mlp_hidden: int = 1, sees_sequence: bool = False):
        super().__init__()
        self.mask_token = nn.Parameter(torch.zeros(emb))
        trunc_normal_(self.mask_token)
        # one extra block over the reassembled sequence, off by default
        self.mixer = EncoderBlock(emb, heads, mlp_hidden) if sees_sequence else None
        self.head = init_linear(nn.Linear(emb, token_dim))


def _expand(index, width):
    return index.unsqueeze(-1).expand(*index.shape, width)


class MaskedTokenModel(nn.Module):
    def __init__(self, encoder: Encoder, decoder_sees_sequence: bool = False):
        super().__init__()
        config = encoder.config
        self.encoder = encoder
        self.decoder = LinearDecoder(
            config.emb, config.token_dim, config.heads, config.mlp_hidden, sees_sequence=decoder_sees_sequence,
        )

    def reassemble(self, latent, masked, visible):
        """
        latent (B, 1 + n_visible, d) -> full sequence (B, 1 + N, d) with the
        encoded visible tokens at their original positions.
        """
        batch, _, emb = latent.shape
        num_tokens = masked.shape[1] + visible.shape[1]
        full = latent.new_zeros(batch, num_tokens, emb)
        full = full.scatter(1, _expand(visible, emb), latent[:, 1:])
        fill = self.decoder.mask_token + self.encoder.embedding.pos_embed[masked]
        full = full.scatter(1, _expand(masked, emb), fill)
        return torch.cat([latent[:, :1], full], dim=1)

    def forward(self, tokens, masked, visible, return_sequence=False):
        """
        tokens (B, N, token_dim), masked (B, k), visible (B, N - k) ->
        predictions (B, k, token_dim) in masked-index order.
        """
        if masked.shape[1] + visible.shape[1] != tokens.shape[1]:
            raise ShapeMismatchError(
                f"mask covers {masked.shape[1]} + {visible.shape[1]} tokens, sample has {tokens.shape[1]}"
            )
        visible_tokens = tokens.gather(1, _expand(visible, tokens.shape[-1]))
        latent = self.encoder(visible_tokens, positions=visible)
        sequence = self.reassemble(latent, masked, visible)
        if self.decoder.mixer is not None:
            sequence = self.decoder.mixer(sequence)
        at_masked = sequence[:, 1:].gather(1, _expand(masked, sequence.shape[-1]))
        predictions = self.decoder.head(at_masked)
        return (predictions, sequence) if return_sequence else predictions


def masked_mse_batch(predictions, tokens, masked):
    """Mean over masked tokens and token dims of the squared error."""
    if masked.numel() == 0:
        raise ConfigError("masked MSE over an empty mask")
    targets = tokens.gather(1, _expand(masked, tokens.shape[-1]))
    if predictions.shape != targets.shape:
        raise ShapeMismatchError(f"predictions {tuple(predictions.shape)} vs targets {tuple(targets.shape)}")
    return ((predictions - targets) ** 2).mean()


def _single(plan: MaskPlan, raw: RawTokens):
    if plan.num_tokens != raw.num_tokens:
        raise ShapeMismatchError(f"mask plan for {plan.num_tokens} tokens, sample has {raw.num_tokens}")
    return stack_plans([plan])


def masked_forward(raw: RawTokens, plan: MaskPlan, model: MaskedTokenModel) -> torch.Tensor:
    """Single-sample form: predictions (|masked|, token_dim)."""
    masked, visible = _single(plan, raw)
    return model(raw.tokens.unsqueeze(0), masked, visible).squeeze(0)


def masked_mse(predictions, raw: RawTokens, plan: MaskPlan) -> torch.Tensor:
    if len(plan) == 0:
        raise ConfigError("masked MSE over an empty mask")
    masked = torch.from_numpy(np.asarray(plan.masked, dtype=np.int64)).unsqueeze(0)
    return masked_mse_batch(predictions.unsqueeze(0), raw.tokens.unsqueeze(0), masked)
