import torch
import torch.nn as nn

from core.exceptions import ShapeMismatchError
from tokenizer.tokens import RawTokens

INIT_STD = 0.02


def trunc_normal_(tensor, std=INIT_STD):
    return nn.init.trunc_normal_(tensor, std=std, a=-2 * std, b=2 * std)


class TokenEmbedding(nn.Module):
    """
    Shared linear projection of raw tokens, one learnable positional row per
    patch token, and a CLS token prepended without a positional term.
    """

    def __init__(self, num_tokens: int, token_dim: int, emb: int):
        super().__init__()
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.emb = emb
        self.projection = nn.Linear(token_dim, emb)
        self.pos_embed = nn.Parameter(torch.zeros(num_tokens, emb))
        self.cls_token = nn.Parameter(torch.zeros(emb))
        self.reset_parameters()

    def reset_parameters(self):
        trunc_normal_(self.projection.weight)
        nn.init.zeros_(self.projection.bias)
        trunc_normal_(self.pos_embed)
        nn.init.zeros_(self.cls_token)

    def forward(self, tokens: torch.Tensor, positions: torch.Tensor = None) -> torch.Tensor:
        """
        tokens (B, n, token_dim) -> (B, n + 1, emb).

        ``positions`` (B, n) selects the positional rows of a subset of
        tokens (the visible ones during masked pre-training); without it the
        full sequence of ``num_tokens`` is expected.
        """
        if tokens.shape[-1] != self.token_dim:
            raise ShapeMismatchError(f"token dim {tokens.shape[-1]} != embedding input {self.token_dim}")
        if positions is None:
            if tokens.shape[-2] != self.num_tokens:
                raise ShapeMismatchError(f"{tokens.shape[-2]} tokens, embedding expects {self.num_tokens}")
            pos = self.pos_embed
        else:
            if positions.shape != tokens.shape[:-1]:
                raise ShapeMismatchError(f"positions {tuple(positions.shape)} do not index tokens {tuple(tokens.shape)}")
            pos = self.pos_embed[positions]

        x = self.projection(tokens) + pos
        cls = self.cls_token.expand(*x.shape[:-2], 1, self.emb)
        return torch.cat([cls, x], dim=-2)


def embed(raw: RawTokens, params: TokenEmbedding) -> torch.Tensor:
    """Single-sample form: (N, token_dim) -> (N + 1, emb)."""
    return params(raw.tokens.unsqueeze(0)).squeeze(0)
