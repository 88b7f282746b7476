import math

import pytest
import torch

from core.exceptions import BackwardWithoutForwardError, CheckpointError, ConfigError, NumericalError
from transformer.accounting import (
    attention_cost,
    cost_report,
    count_params,
    encoder_macs,
    factoformer_macs,
    joint_macs,
)
from transformer.autodiff import backward, gradient_check
from transformer.checkpoints import load_checkpoint, payload_path, save_checkpoint
from transformer.config import EncoderConfig
from transformer.encoder import Encoder, encode
from transformer.layers import EncoderBlock, MultiHeadAttention, attention_head

SPECTRAL = EncoderConfig.for_mode('spectral', 7, 200)
SPATIAL = EncoderConfig.for_mode('spatial', 7, 200)
JOINT = EncoderConfig.for_mode('joint', 7, 200, group=10)


def tiny_config(layers=1):
    return EncoderConfig(layers=layers, heads=2, emb=4, mlp_hidden=3, num_tokens=2, token_dim=3)


class TestAttention:
    def test_single_token_returns_values(self):
        q, k, v = torch.rand(3, 1, 2, dtype=torch.float64).unbind(0)
        torch.testing.assert_close(attention_head(q, k, v), v, rtol=0, atol=0)

    def test_zero_queries_average_values(self):
        k, v = torch.rand(2, 5, 3, dtype=torch.float64).unbind(0)
        out, weights = attention_head(torch.zeros(5, 3, dtype=torch.float64), k, v, return_weights=True)
        torch.testing.assert_close(weights, torch.full((5, 5), 0.2, dtype=torch.float64))
        torch.testing.assert_close(out, v.mean(dim=0).expand(5, 3))

    def test_matches_naive_softmax(self):
        torch.manual_seed(0)
        q, k, v = torch.randn(3, 3, 2, dtype=torch.float64).unbind(0)
        expected = torch.zeros(3, 2, dtype=torch.float64)
        for i in range(3):
            scores = [math.exp(float(q[i] @ k[j]) / math.sqrt(2)) for j in range(3)]
            total = sum(scores)
            for j in range(3):
                expected[i] += scores[j] / total * v[j]
        torch.testing.assert_close(attention_head(q, k, v), expected, atol=1e-10, rtol=0)

    def test_rows_sum_to_one(self):
        q = torch.randn(4, 7, 8) * 10
        k, v = torch.randn(2, 4, 7, 8).unbind(0)
        _, weights = attention_head(q, k, v, return_weights=True)
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(4, 7), atol=1e-6, rtol=0)

    def test_non_finite_input(self):
        q = torch.zeros(2, 2)
        q[0, 0] = float('inf')
        with pytest.raises(NumericalError):
            attention_head(q, torch.zeros(2, 2), torch.zeros(2, 2))


class TestMultiHead:
    def test_single_head_is_attention_then_output_projection(self):
        attn = MultiHeadAttention(4, 1).double()
        x = torch.randn(3, 4, dtype=torch.float64)
        expected = attn.out_proj(attention_head(attn.q_proj(x), attn.k_proj(x), attn.v_proj(x)))
        torch.testing.assert_close(attn(x), expected)

    def test_zero_output_projection(self):
        attn = MultiHeadAttention(4, 2)
        with torch.no_grad():
            attn.out_proj.weight.zero_()
        assert (attn(torch.randn(3, 4)) == 0).all()

    def test_heads_computed_independently(self):
        torch.manual_seed(2)
        attn = MultiHeadAttention(4, 2).double()
        x = torch.randn(3, 4, dtype=torch.float64)
        q, k, v = attn.q_proj(x), attn.k_proj(x), attn.v_proj(x)
        heads = [attention_head(q[:, s], k[:, s], v[:, s]) for s in (slice(0, 2), slice(2, 4))]
        expected = attn.out_proj(torch.cat(heads, dim=-1))
        torch.testing.assert_close(attn(x), expected)

    def test_permutation_equivariant(self):
        attn = MultiHeadAttention(8, 4).double()
        x = torch.randn(6, 8, dtype=torch.float64)
        perm = torch.randperm(6)
        torch.testing.assert_close(attn(x[perm]), attn(x)[perm])


class TestBlock:
    def test_zero_branches_are_identity(self):
        block = EncoderBlock(4, 2, 3)
        with torch.no_grad():
            for name, parameter in block.named_parameters():
                if not name.startswith('norm'):
                    parameter.zero_()
        x = torch.randn(5, 4)
        assert torch.equal(block(x), x)

    def test_layer_norm_of_constant_token(self):
        block = EncoderBlock(4, 2, 3)
        assert (block.norm1(torch.full((1, 4), 3.0)) == 0).all()

    def test_matches_reference_forward(self):
        torch.manual_seed(3)
        block = EncoderBlock(4, 2, 3).double()
        x = torch.randn(3, 4, dtype=torch.float64)

        def layer_norm(t, norm):
            mean = t.mean(-1, keepdim=True)
            var = ((t - mean) ** 2).mean(-1, keepdim=True)
            return (t - mean) / torch.sqrt(var + norm.eps) * norm.weight + norm.bias

        def gelu(t):
            return 0.5 * t * (1 + torch.erf(t / math.sqrt(2)))

        hidden = x + block.attn(layer_norm(x, block.norm1))
        mlp = block.mlp
        expected = hidden + mlp.fc2(gelu(mlp.fc1(layer_norm(hidden, block.norm2))))
        torch.testing.assert_close(block(x), expected, atol=1e-8, rtol=0)


class TestEncoder:
    def test_spectral_output_shape(self):
        out = Encoder(SPECTRAL)(torch.rand(1, 200, 49))
        assert out.shape == (1, 201, 32)

    def test_single_layer_is_block_then_norm(self):
        encoder = Encoder(tiny_config()).double()
        sequence = torch.randn(1, 3, 4, dtype=torch.float64)
        expected = encoder.norm(encoder.blocks[0](sequence))
        torch.testing.assert_close(encode(sequence, encoder), expected)

    def test_zero_layers_is_the_embedding(self):
        encoder = Encoder(tiny_config(layers=0))
        tokens = torch.rand(1, 2, 3)
        assert torch.equal(encoder(tokens), encoder.embedding(tokens))

    def test_permuting_tokens_with_positions(self):
        torch.manual_seed(4)
        config = EncoderConfig(layers=2, heads=2, emb=8, mlp_hidden=6, num_tokens=5, token_dim=3)
        encoder = Encoder(config).double()
        tokens = torch.randn(1, 5, 3, dtype=torch.float64)
        perm = torch.tensor([3, 0, 4, 1, 2])
        out = encoder(tokens)
        with torch.no_grad():
            encoder.embedding.pos_embed.copy_(encoder.embedding.pos_embed[perm])
        permuted = encoder(tokens[:, perm])
        torch.testing.assert_close(permuted[:, 0], out[:, 0])
        torch.testing.assert_close(permuted[:, 1:], out[:, 1:][:, perm])

    def test_deterministic(self):
        encoder = Encoder(tiny_config())
        tokens = torch.rand(2, 2, 3)
        assert torch.equal(encoder(tokens), encoder(tokens))


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            EncoderConfig(layers=1, heads=3, emb=8, mlp_hidden=4, num_tokens=2, token_dim=2).validate()

    def test_negative_layers(self):
        with pytest.raises(ConfigError):
            EncoderConfig(layers=-1, heads=1, emb=8, mlp_hidden=4, num_tokens=2, token_dim=2).validate()

    def test_modes(self):
        assert (SPECTRAL.num_tokens, SPECTRAL.token_dim, SPECTRAL.seq_len) == (200, 49, 201)
        assert (SPATIAL.num_tokens, SPATIAL.token_dim, SPATIAL.seq_len) == (49, 200, 50)
        assert (JOINT.num_tokens, JOINT.seq_len) == (980, 981)

    def test_round_trip_dict(self):
        assert EncoderConfig.from_dict(SPECTRAL.to_dict()) == SPECTRAL
        with pytest.raises(ConfigError):
            EncoderConfig.from_dict({'layers': 1})


class TestAccounting:
    def test_pretraining_network_sizes(self):
        assert count_params(SPECTRAL, with_decoder=True) == 32965
        assert count_params(SPATIAL, with_decoder=True) == 119216
        assert abs(count_params(SPECTRAL, with_decoder=True) - 33000) <= 0.02 * 33000
        assert abs(count_params(SPATIAL, with_decoder=True) - 119000) <= 0.02 * 119000

    def test_counts_match_modules(self):
        for config in (SPECTRAL, SPATIAL, tiny_config(), tiny_config(layers=0)):
            assert count_params(config) == sum(p.numel() for p in Encoder(config).parameters())

    def test_zero_layers(self):
        config = tiny_config(layers=0)
        assert count_params(config) == (3 * 4 + 4) + 2 * 4 + 4

    def test_factorized_smaller_than_joint(self):
        assert count_params(SPECTRAL) + count_params(SPATIAL) < count_params(JOINT)

    def test_attention_pairs(self):
        assert attention_cost(200, 49) == (62001, 42401)
        assert attention_cost(0, 7) == (49, 49)
        with pytest.raises(ConfigError):
            attention_cost(-1, 3)

    def test_model_cost(self):
        factorized = factoformer_macs(SPECTRAL, SPATIAL, classes=16, fusion_hidden=64)
        joint = joint_macs(JOINT, classes=16, fusion_hidden=64)
        assert 10.77e6 / 2 <= factorized <= 10.77e6 * 2
        assert joint / factorized >= 2

    def test_attention_products_add_quadratic_term(self):
        extra = encoder_macs(SPATIAL, attention_products=True) - encoder_macs(SPATIAL)
        assert extra == SPATIAL.layers * 2 * 50 * 50 * 64

    def test_report(self):
        report = cost_report(SPECTRAL, SPATIAL, JOINT, classes=16, fusion_hidden=64)
        data = report.to_dict()
        assert data['factorized_pairs'] == 42401
        assert data['factoformer_params'] == 31316 + 106152 + (96 * 64 + 64) + (64 * 16 + 16)
        assert data['cost_ratio'] == pytest.approx(report.joint_baseline_mflops / report.factorized_mflops)


class TestAutodiff:
    def test_gradient_check_single_layer_encoder(self):
        torch.manual_seed(5)
        tokens = torch.randn(1, 2, 3, dtype=torch.float64)
        assert gradient_check(Encoder(tiny_config()), lambda forward: (forward(tokens) ** 2).sum())

    def test_gradient_check_leaves_the_module_alone(self):
        torch.manual_seed(5)
        encoder = Encoder(tiny_config())
        before = {name: p.detach().clone() for name, p in encoder.named_parameters()}
        tokens = torch.randn(1, 2, 3, dtype=torch.float64)
        assert gradient_check(encoder, lambda forward: (forward(tokens) ** 2).sum())
        assert all(p.dtype == torch.float32 for p in encoder.parameters())
        for name, p in encoder.named_parameters():
            assert torch.equal(p, before[name])
        assert encoder(torch.randn(1, 2, 3)).dtype == torch.float32

    def test_backward_without_forward(self):
        encoder = Encoder(tiny_config())
        with pytest.raises(BackwardWithoutForwardError):
            backward(torch.tensor(1.0), encoder)

    def test_unused_parameters_get_zero(self):
        encoder = Encoder(tiny_config())
        loss = encoder.embedding.cls_token.sum()
        grads = backward(loss, encoder)
        assert torch.equal(grads['embedding.cls_token'], torch.ones(4))
        assert (grads['blocks.0.mlp.fc1.weight'] == 0).all()

    def test_perfect_reconstruction_has_zero_gradient(self):
        encoder = Encoder(tiny_config())
        tokens = torch.rand(1, 2, 3)
        out = encoder(tokens)
        loss = ((out - out.detach()) ** 2).mean()
        grads = backward(loss, encoder)
        assert all((g == 0).all() for g in grads.values())


class TestCheckpoints:
    def test_round_trip_is_bit_exact(self, tmp_path):
        encoder = Encoder(tiny_config())
        path = save_checkpoint(tmp_path / 'enc.ckpt', {'final': encoder.state_dict()},
                               config=tiny_config().to_dict(), seed=3, epoch=7, tag='spectral')
        assert payload_path(path).exists()
        checkpoint = load_checkpoint(path)
        assert checkpoint.config == tiny_config().to_dict()
        assert checkpoint.manifest['seed'] == 3 and checkpoint.manifest['epoch'] == 7
        for name, tensor in encoder.state_dict().items():
            assert torch.equal(checkpoint.state()[name], tensor)

    def test_missing_state(self, tmp_path):
        path = save_checkpoint(tmp_path / 'enc.ckpt', {'final': {'w': torch.ones(2)}}, config={})
        with pytest.raises(CheckpointError):
            load_checkpoint(path).state('best')

    def test_truncated_payload(self, tmp_path):
        path = save_checkpoint(tmp_path / 'enc.ckpt', {'final': {'w': torch.ones(4)}}, config={})
        payload_path(path).write_bytes(b'\0' * 8)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_or_foreign_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / 'absent.ckpt')
        (tmp_path / 'other.ckpt').write_text('{"format": "something-else", "states": {}}')
        payload_path(tmp_path / 'other.ckpt').write_bytes(b'')
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / 'other.ckpt')
