import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from core.exceptions import ConfigError, NumericalError, ShapeMismatchError
from core.training import build_optimizer, build_scheduler, lr_at_epoch, read_loss_log
from hsi.datasets import SampleSet
from hsi.models import Sample
from hsi.preprocessing import PatchExtractor, normalize
from hsi.scene import build_scene
from hsi.synthetic import make_low_rank_cube
from pretrain.masking import MaskPlan, masked_count, sample_mask, stack_plans
from pretrain.objective import MaskedTokenModel, masked_forward, masked_mse, masked_mse_batch
from pretrain.tasks import PretrainConfig, pretrain
from tokenizer.tokens import RawTokens, tokenize_spatial, tokenize_spectral
from transformer.autodiff import gradient_check
from transformer.checkpoints import load_checkpoint
from transformer.config import EncoderConfig
from transformer.encoder import Encoder

TINY = {'layers': 1, 'heads': 2, 'emb': 8, 'mlp_hidden': 4}


def tiny_model(num_tokens=6, token_dim=3, layers=1):
    config = EncoderConfig(layers=layers, heads=2, emb=4, mlp_hidden=3, num_tokens=num_tokens, token_dim=token_dim)
    return MaskedTokenModel(Encoder(config))


def plan_of(indices, num_tokens):
    return MaskPlan(masked=np.array(indices), num_tokens=num_tokens, ratio=len(indices) / num_tokens)


class TestMasking:
    @pytest.mark.parametrize('num_tokens, expected', [(200, 140), (49, 34), (10, 7)])
    def test_counts_at_default_ratio(self, num_tokens, expected, rng):
        assert masked_count(num_tokens, 0.7) == expected
        assert len(sample_mask(num_tokens, 0.7, rng)) == expected

    @given(st.integers(2, 1024), st.sampled_from([0.5, 0.6, 0.7, 0.8]), st.integers(0, 2 ** 32 - 1))
    def test_exact_count(self, num_tokens, ratio, seed):
        rng = np.random.default_rng(seed)
        count = masked_count(num_tokens, ratio)
        if count in (0, num_tokens):
            with pytest.raises(ConfigError):
                sample_mask(num_tokens, ratio, rng)
            return
        plan = sample_mask(num_tokens, ratio, rng)
        assert len(plan) == count
        assert (np.diff(plan.masked) > 0).all()
        assert plan.masked.min() >= 0 and plan.masked.max() < num_tokens
        assert len(plan.visible) == num_tokens - count
        assert not set(plan.visible) & set(plan.masked)

    def test_uniform_over_indices(self):
        rng = np.random.default_rng(0)
        hits = np.zeros(10)
        for _ in range(10_000):
            hits[sample_mask(10, 0.5, rng).masked] += 1
        np.testing.assert_allclose(hits / 10_000, 0.5, atol=0.02)

    def test_same_seed_same_mask(self):
        first = sample_mask(49, 0.7, np.random.default_rng(5))
        second = sample_mask(49, 0.7, np.random.default_rng(5))
        np.testing.assert_array_equal(first.masked, second.masked)

    @pytest.mark.parametrize('ratio', [0.0, 1.0, -0.1, 1.5])
    def test_ratio_out_of_range(self, ratio, rng):
        with pytest.raises(ConfigError):
            sample_mask(10, ratio, rng)

    def test_too_few_tokens(self, rng):
        with pytest.raises(ConfigError):
            sample_mask(1, 0.5, rng)
        with pytest.raises(ConfigError):
            sample_mask(3, 0.1, rng)

    def test_stack_plans(self):
        masked, visible = stack_plans([plan_of([0, 3], 5), plan_of([1, 2], 5)])
        assert masked.tolist() == [[0, 3], [1, 2]]
        assert visible.tolist() == [[1, 2, 4], [0, 3, 4]]
        assert masked.dtype == torch.int64


class TestConsistentMasking:
    sample = Sample(patch=np.random.default_rng(2).random((3, 3, 5)).astype(np.float32), center=(1, 1))

    def test_spectral_token_hides_a_whole_band(self):
        raw = tokenize_spectral(self.sample)
        plan = plan_of([1, 4], raw.num_tokens)
        hidden = raw.tokens[plan.masked].numpy()
        for row, band in zip(hidden, plan.masked):
            np.testing.assert_array_equal(row, self.sample.patch[:, :, band].ravel())

    def test_spatial_token_hides_a_whole_spectrum(self):
        raw = tokenize_spatial(self.sample)
        plan = plan_of([0, 4, 8], raw.num_tokens)
        hidden = raw.tokens[plan.masked].numpy()
        np.testing.assert_array_equal(hidden, self.sample.patch.reshape(9, 5)[plan.masked])


class TestMaskedForward:
    def test_predictions_in_masked_order(self):
        model = tiny_model()
        raw = RawTokens(torch.rand(6, 3), 'spatial')
        out = masked_forward(raw, plan_of([1, 2, 5], 6), model)
        assert out.shape == (3, 3)

    def test_positional_regression_without_encoder(self):
        model = tiny_model(layers=0)
        with torch.no_grad():
            model.decoder.mask_token.zero_()
        raw = RawTokens(torch.rand(6, 3), 'spatial')
        plan = plan_of([0, 4], 6)
        expected = model.decoder.head(model.encoder.embedding.pos_embed[[0, 4]])
        torch.testing.assert_close(masked_forward(raw, plan, model), expected)

    def test_predictions_ignore_masked_values(self):
        model = tiny_model()
        tokens = torch.rand(6, 3)
        plan = plan_of([1, 3], 6)
        changed = tokens.clone()
        changed[[1, 3]] = 100.0
        torch.testing.assert_close(
            masked_forward(RawTokens(tokens, 'spatial'), plan, model),
            masked_forward(RawTokens(changed, 'spatial'), plan, model),
        )

    def test_default_decoder_is_blind_to_visible_tokens(self):
        model = tiny_model()
        tokens = torch.rand(6, 3)
        plan = plan_of([1, 3], 6)
        changed = tokens.clone()
        changed[plan.visible] = torch.rand(4, 3) * 50.0
        torch.testing.assert_close(
            masked_forward(RawTokens(tokens, 'spatial'), plan, model),
            masked_forward(RawTokens(changed, 'spatial'), plan, model),
        )

    def test_sequence_decoder_reads_visible_tokens(self):
        config = EncoderConfig(layers=1, heads=2, emb=4, mlp_hidden=3, num_tokens=6, token_dim=3)
        model = MaskedTokenModel(Encoder(config), decoder_sees_sequence=True)
        tokens = torch.rand(6, 3)
        plan = plan_of([1, 3], 6)
        changed = tokens.clone()
        changed[plan.visible] = torch.rand(4, 3) * 50.0
        first = masked_forward(RawTokens(tokens, 'spatial'), plan, model)
        second = masked_forward(RawTokens(changed, 'spatial'), plan, model)
        assert not torch.allclose(first, second)

    def test_reassembly_keeps_visible_latents(self):
        model = tiny_model()
        masked, visible = stack_plans([plan_of([0, 2, 3], 6), plan_of([1, 4, 5], 6)])
        latent = torch.randn(2, 4, 4)
        sequence = model.reassemble(latent, masked, visible)
        assert sequence.shape == (2, 7, 4)
        assert torch.equal(sequence[:, 0], latent[:, 0])
        for b in range(2):
            assert torch.equal(sequence[b, 1 + visible[b]], latent[b, 1:])
            fill = model.decoder.mask_token + model.encoder.embedding.pos_embed[masked[b]]
            assert torch.equal(sequence[b, 1 + masked[b]], fill)

    def test_mask_must_cover_the_sample(self):
        with pytest.raises(ShapeMismatchError):
            masked_forward(RawTokens(torch.rand(5, 3), 'spatial'), plan_of([0], 6), tiny_model())

    def test_decoder_over_the_whole_sequence(self):
        config = EncoderConfig(layers=1, heads=2, emb=4, mlp_hidden=3, num_tokens=6, token_dim=3)
        model = MaskedTokenModel(Encoder(config), decoder_sees_sequence=True)
        masked, visible = stack_plans([plan_of([2, 5], 6)])
        predictions, sequence = model(torch.rand(1, 6, 3), masked, visible, return_sequence=True)
        assert predictions.shape == (1, 2, 3) and sequence.shape == (1, 7, 4)

    def test_gradient_check(self):
        torch.manual_seed(0)
        tokens = torch.rand(2, 4, 3, dtype=torch.float64)
        masked, visible = stack_plans([plan_of([0, 3], 4), plan_of([1, 2], 4)])
        model = tiny_model(num_tokens=4)
        assert gradient_check(model, lambda forward: masked_mse_batch(forward(tokens, masked, visible), tokens, masked))


class TestMaskedMse:
    raw = RawTokens(torch.rand(5, 4, dtype=torch.float64), 'spectral')
    plan = plan_of([0, 2, 3], 5)

    def test_exact_reconstruction(self):
        assert masked_mse(self.raw.tokens[self.plan.masked], self.raw, self.plan).item() == 0.0

    def test_constant_offset(self):
        assert masked_mse(self.raw.tokens[self.plan.masked] + 1, self.raw, self.plan).item() == pytest.approx(1.0)

    def test_matches_double_loop(self):
        predictions = torch.rand(3, 4, dtype=torch.float64)
        total = 0.0
        for row, index in enumerate(self.plan.masked):
            for col in range(4):
                total += (float(predictions[row, col]) - float(self.raw.tokens[index, col])) ** 2
        expected = total / (3 * 4)
        assert abs(masked_mse(predictions, self.raw, self.plan).item() - expected) < 1e-12

    def test_visible_originals_get_no_gradient(self):
        tokens = self.raw.tokens.clone().requires_grad_(True)
        loss = masked_mse(torch.zeros(3, 4, dtype=torch.float64), RawTokens(tokens, 'spectral'), self.plan)
        loss.backward()
        assert (tokens.grad[self.plan.visible] == 0).all()
        assert (tokens.grad[self.plan.masked] != 0).any()

    def test_empty_mask(self):
        with pytest.raises(ConfigError):
            masked_mse(torch.zeros(0, 4), self.raw, MaskPlan(np.array([], dtype=int), 5, 0.0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            masked_mse(torch.zeros(2, 4, dtype=torch.float64), self.raw, self.plan)


class TestSchedule:
    def test_step_decay(self):
        assert lr_at_epoch(5e-4, 20) == pytest.approx(5e-4)
        assert lr_at_epoch(5e-4, 21) == pytest.approx(5e-4 * 0.9)
        assert lr_at_epoch(5e-4, 41) == pytest.approx(5e-4 * 0.81)

    def test_scheduler_follows_the_contract(self):
        parameter = torch.nn.Parameter(torch.zeros(1))
        optimizer = build_optimizer([parameter], 5e-4)
        scheduler = build_scheduler(optimizer)
        for epoch in range(1, 42):
            assert scheduler.get_last_lr()[0] == pytest.approx(lr_at_epoch(5e-4, epoch))
            optimizer.step()
            scheduler.step()


@pytest.fixture
def pretrain_pool(synthetic_scene):
    scene = build_scene('synthetic', synthetic_scene.cube, synthetic_scene.labels)
    return scene.pretrain_set(3)


def spectral_config(pool):
    return EncoderConfig.for_mode('spectral', 3, pool.bands, widths=TINY)


class TestPretrain:
    def test_runs_and_writes_outputs(self, pretrain_pool, tmp_path):
        config = PretrainConfig(epochs=3, batch_size=16, lr=1e-3, step_size=1, gamma=0.5)
        result = pretrain(pretrain_pool, 'spectral', spectral_config(pretrain_pool), config, seed=1, out_dir=tmp_path)

        assert [record.epoch for record in result.records] == [1, 2, 3]
        assert [record.lr for record in result.records] == pytest.approx([1e-3, 5e-4, 2.5e-4])
        assert result.best_loss == min(result.losses)

        checkpoint = load_checkpoint(tmp_path / 'checkpoints' / 'pretrain_spectral.ckpt')
        assert checkpoint.config['mode'] == 'spectral'
        assert checkpoint.config['encoder'] == spectral_config(pretrain_pool).to_dict()
        assert checkpoint.meta['best_epoch'] == result.best_epoch
        assert set(checkpoint.states) == {'final', 'best'}
        assert any(name.startswith('decoder.') for name in checkpoint.state('final'))
        for name, tensor in result.final_state.items():
            assert torch.equal(checkpoint.state('final')[name], tensor)

        log = read_loss_log(tmp_path / 'logs' / 'pretrain_spectral_loss.ndjson')
        assert [record.loss for record in log] == result.losses

    def test_same_seed_same_run(self, pretrain_pool):
        config = PretrainConfig(epochs=2, batch_size=16)
        first = pretrain(pretrain_pool, 'spectral', spectral_config(pretrain_pool), config, seed=4)
        second = pretrain(pretrain_pool, 'spectral', spectral_config(pretrain_pool), config, seed=4)
        assert first.losses == second.losses
        for name, tensor in first.final_state.items():
            assert torch.equal(second.final_state[name], tensor)

    def test_spatial_mode(self, pretrain_pool):
        config = EncoderConfig.for_mode('spatial', 3, pretrain_pool.bands, widths=TINY)
        result = pretrain(pretrain_pool, 'spatial', config, PretrainConfig(epochs=1, batch_size=32), seed=0)
        assert np.isfinite(result.losses).all()

    def test_invalid_inputs(self, pretrain_pool):
        with pytest.raises(ConfigError):
            pretrain(pretrain_pool, 'spectral', spectral_config(pretrain_pool), PretrainConfig(ratio=1.0))
        with pytest.raises(ConfigError):
            empty = pretrain_pool.subset(np.array([], dtype=int))
            pretrain(empty, 'spectral', spectral_config(pretrain_pool), PretrainConfig(epochs=1))
        with pytest.raises(ConfigError):
            pretrain(pretrain_pool, 'temporal', spectral_config(pretrain_pool), PretrainConfig(epochs=1))

    @pytest.mark.parametrize('blowup', [float('nan'), float('inf')])
    def test_non_finite_loss_stops_the_run(self, pretrain_pool, monkeypatch, blowup):
        monkeypatch.setattr('pretrain.tasks.masked_mse_batch', lambda *args: masked_mse_batch(*args) * blowup)
        with pytest.raises(NumericalError, match='pre-training loss at epoch 1'):
            pretrain(pretrain_pool, 'spectral', spectral_config(pretrain_pool), PretrainConfig(epochs=1))

    @pytest.mark.slow
    def test_low_rank_scene_is_reconstructable(self):
        cube = normalize(make_low_rank_cube(size=16, bands=16, rank=2, seed=0))
        extractor = PatchExtractor(cube, 3)
        coords = np.argwhere(np.ones((16, 16), dtype=bool))
        pool = SampleSet(extractor, coords)
        encoder_config = EncoderConfig.for_mode(
            'spatial', 3, 16, widths={'layers': 2, 'heads': 2, 'emb': 16, 'mlp_hidden': 16},
        )
        config = PretrainConfig(epochs=50, batch_size=32, lr=2e-3, decoder_sees_sequence=True)
        result = pretrain(pool, 'spatial', encoder_config, config, seed=0)
        assert result.losses[-1] * 10 <= result.losses[0]
