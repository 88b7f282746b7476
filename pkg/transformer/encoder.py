import torch
import torch.nn as nn

from core.exceptions import ShapeMismatchError
from tokenizer.embedding import TokenEmbedding
from transformer.config import EncoderConfig
from transformer.layers import EncoderBlock


class Encoder(nn.Module):
    """
    Token embedding, L pre-norm blocks and a final layer norm. The final norm
    is dropped together with the blocks when L = 0.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config.validate()
        self.embedding = TokenEmbedding(config.num_tokens, config.token_dim, config.emb)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.emb, config.heads, config.mlp_hidden) for _ in range(config.layers)
        )
        self.norm = nn.LayerNorm(config.emb) if config.layers else nn.Identity()

    def encode(self, sequence: torch.Tensor) -> torch.Tensor:
        """Embedded sequence (B, T, d) -> encoded (B, T, d); CLS stays at index 0."""
        if sequence.shape[-1] != self.config.emb:
            raise ShapeMismatchError(f"sequence width {sequence.shape[-1]} != {self.config.emb}")
        for block in self.blocks:
            sequence = block(sequence)
        return self.norm(sequence)

    def forward(self, tokens: torch.Tensor, positions: torch.Tensor = None) -> torch.Tensor:
        return self.encode(self.embedding(tokens, positions))


def encode(sequence: torch.Tensor, encoder: Encoder) -> torch.Tensor:
    return encoder.encode(sequence)
