"""
Analytic parameter and cost accounting.

Costs are multiply-accumulate counts. The default convention counts the
linear maps only (token embedding, Q/K/V, W0, MLP, heads), which is what
module-level profilers report; ``attention_products=True`` adds the
Q K^T and A V products.
"""

from dataclasses import dataclass

from core.exceptions import ConfigError
from transformer.config import EncoderConfig


def linear_params(fan_in, fan_out):
    return fan_in * fan_out + fan_out


def block_params(config: EncoderConfig):
    d = config.emb
    norms = 2 * (2 * d)
    attention = 4 * linear_params(d, d)
    mlp = linear_params(d, config.mlp_hidden) + linear_params(config.mlp_hidden, d)
    return norms + attention + mlp


def decoder_params(config: EncoderConfig):
    """Mask token plus the linear reconstruction head."""
    return config.emb + linear_params(config.emb, config.token_dim)


def count_params(config: EncoderConfig, with_decoder: bool = False) -> int:
    d = config.emb
    total = linear_params(config.token_dim, d) + config.num_tokens * d + d
    if config.layers:
        total += config.layers * block_params(config) + 2 * d
    if with_decoder:
        total += decoder_params(config)
    return total


def head_params(in_features, hidden, classes):
    return linear_params(in_features, hidden) + linear_params(hidden, classes)


def attention_cost(m: int, n: int):
    """Token-pair counts per attention layer: (joint, factorized)."""
    if m < 0 or n < 0:
        raise ConfigError(f"token counts must be >= 0, got {m}, {n}")
    return (m + n) ** 2, m * m + n * n


def encoder_macs(config: EncoderConfig, tokens: int = None, attention_products: bool = False) -> int:
    """One sample through the embedding and every block; ``tokens`` patch tokens (default all)."""
    tokens = config.num_tokens if tokens is None else tokens
    seq = tokens + 1
    d = config.emb
    per_layer = 4 * seq * d * d + 2 * seq * d * config.mlp_hidden
    if attention_products:
        per_layer += 2 * seq * seq * d
    return tokens * config.token_dim * d + config.layers * per_layer


def factoformer_macs(spectral: EncoderConfig, spatial: EncoderConfig, classes: int,
                     fusion_hidden: int, attention_products: bool = False) -> int:
    head = (spectral.emb + spatial.emb) * fusion_hidden + fusion_hidden * classes
    return (
        encoder_macs(spectral, attention_products=attention_products)
        + encoder_macs(spatial, attention_products=attention_products)
        + head
    )


def joint_macs(joint: EncoderConfig, classes: int, fusion_hidden: int, attention_products: bool = False) -> int:
    head = joint.emb * fusion_hidden + fusion_hidden * classes
    return encoder_macs(joint, attention_products=attention_products) + head


@dataclass
class CostReport:
    spectral_tokens: int
    spatial_tokens: int
    joint_pairs: int
    factorized_pairs: int
    factorized_mflops: float
    joint_baseline_mflops: float
    spectral_params: int
    spatial_params: int
    spectral_params_pretrain: int
    spatial_params_pretrain: int
    joint_params: int
    factoformer_params: int

    @property
    def cost_ratio(self):
        return self.joint_baseline_mflops / self.factorized_mflops

    def to_dict(self):
        data = dict(self.__dict__)
        data['cost_ratio'] = self.cost_ratio
        return data


def cost_report(spectral: EncoderConfig, spatial: EncoderConfig, joint: EncoderConfig,
                classes: int, fusion_hidden: int, attention_products: bool = False) -> CostReport:
    joint_pairs, factorized_pairs = attention_cost(spectral.num_tokens, spatial.num_tokens)
    return CostReport(
        spectral_tokens=spectral.num_tokens,
        spatial_tokens=spatial.num_tokens,
        joint_pairs=joint_pairs,
        factorized_pairs=factorized_pairs,
        factorized_mflops=factoformer_macs(spectral, spatial, classes, fusion_hidden, attention_products) / 1e6,
        joint_baseline_mflops=joint_macs(joint, classes, fusion_hidden, attention_products) / 1e6,
        spectral_params=count_params(spectral),
        spatial_params=count_params(spatial),
        spectral_params_pretrain=count_params(spectral, with_decoder=True),
        spatial_params_pretrain=count_params(spatial, with_decoder=True),
        joint_params=count_params(joint),
        factoformer_params=(
            count_params(spectral) + count_params(spatial)
            + head_params(spectral.emb + spatial.emb, fusion_hidden, classes)
        ),
    )
