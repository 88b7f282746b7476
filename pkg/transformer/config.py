from dataclasses import asdict, dataclass

from core.exceptions import ConfigError
from factoformer_project import settings
from tokenizer.tokens import token_layout


@dataclass(frozen=True)
class EncoderConfig:
    layers: int
    heads: int
    emb: int
    mlp_hidden: int
    num_tokens: int
    token_dim: int

    @property
    def seq_len(self):
        return self.num_tokens + 1

    @property
    def head_dim(self):
        return self.emb // self.heads

    def validate(self):
        """
        Zero layers is accepted as a degenerate embedding-only encoder;
        run configs require at least one.
        """
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        for name in ('heads', 'emb', 'mlp_hidden', 'num_tokens', 'token_dim'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.emb % self.heads:
            raise ConfigError(f"embedding size {self.emb} is not divisible by {self.heads} heads")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**{key: int(data[key]) for key in cls.__dataclass_fields__})
        except KeyError as exc:
            raise ConfigError(f"encoder config lacks {exc}") from None

    @classmethod
    def for_mode(cls, mode, patch_size, bands, group=1, widths=None):
        """
        Config for one token mode on S x S x B samples. ``widths`` overrides the
        layers/heads/emb/mlp_hidden defaults for that mode.
        """
        num_tokens, token_dim = token_layout(mode, patch_size, bands, group)
        defaults = {
            'spectral': settings.SPECTRAL_ENCODER,
            'spatial': settings.SPATIAL_ENCODER,
            'joint': settings.JOINT_ENCODER,
        }[mode]
        widths = {**defaults, **(widths or {})}
        return cls(
            layers=int(widths['layers']),
            heads=int(widths['heads']),
            emb=int(widths['emb']),
            mlp_hidden=int(widths['mlp_hidden']),
            num_tokens=num_tokens,
            token_dim=token_dim,
        ).validate()
