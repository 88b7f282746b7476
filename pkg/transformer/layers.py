import math

import torch
import torch.nn as nn

from core.exceptions import NumericalError, ShapeMismatchError
from tokenizer.embedding import trunc_normal_


def init_linear(layer: nn.Linear):
    trunc_normal_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


def attention_head(q, k, v, return_weights=False):
    """
    softmax(Q K^T / sqrt(d_k)) V over the last two dims.

    torch.softmax subtracts the row max before exponentiating.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(f"q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)} do not agree")
    for name, tensor in (('queries', q), ('keys', k), ('values', v)):
        if not torch.isfinite(tensor).all():
            raise NumericalError(f"non-finite {name} entering attention")

    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    """Per-head Q/K/V blocks of width d/h, concatenated and projected by W0."""

    def __init__(self, emb: int, heads: int):
        super().__init__()
        if emb % heads:
            raise ShapeMismatchError(f"embedding size {emb} is not divisible by {heads} heads")
        self.emb = emb
        self.heads = heads
        self.q_proj = init_linear(nn.Linear(emb, emb))
        self.k_proj = init_linear(nn.Linear(emb, emb))
        self.v_proj = init_linear(nn.Linear(emb, emb))
        self.out_proj = init_linear(nn.Linear(emb, emb))

    def _split(self, x):
        return x.unflatten(-1, (self.heads, self.emb // self.heads)).transpose(-3, -2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.emb:
            raise ShapeMismatchError(f"input width {x.shape[-1]} != {self.emb}")
        heads = attention_head(self._split(self.q_proj(x)), self._split(self.k_proj(x)), self._split(self.v_proj(x)))
        return self.out_proj(heads.transpose(-3, -2).flatten(-2))


class MLP(nn.Module):
    """Two fully connected layers with exact (erf) GELU in between."""

    def __init__(self, emb: int, hidden: int):
        super().__init__()
        self.fc1 = init_linear(nn.Linear(emb, hidden))
        self.act = nn.GELU(approximate='none')
        self.fc2 = init_linear(nn.Linear(hidden, emb))

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm residual block: x + MHA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, emb: int, heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(emb)
        self.attn = MultiHeadAttention(emb, heads)
        self.norm2 = nn.LayerNorm(emb)
        self.mlp = MLP(emb, mlp_hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))
