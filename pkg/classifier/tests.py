import math

import numpy as np
import pytest
import torch

from classifier.losses import batch_cross_entropy, cross_entropy
from classifier.models import (
    build_classifier,
    classifier_spec,
    classify,
    joint_baseline,
    load_model,
    load_pretrained,
    predict,
    save_model,
)
from classifier.tasks import FinetuneConfig, finetune, train_loss
from core.exceptions import CheckpointError, ConfigError, LabelError, NumericalError, ShapeMismatchError
from hsi.io import save_split_file
from hsi.models import Sample
from hsi.scene import build_scene
from pretrain.tasks import PretrainConfig, pretrain
from tokenizer.embedding import embed
from tokenizer.tokens import tokenize, tokenize_spatial, tokenize_spectral
from transformer.autodiff import gradient_check
from transformer.checkpoints import load_checkpoint
from transformer.config import EncoderConfig
from transformer.encoder import Encoder, encode

TINY = {'layers': 1, 'heads': 2, 'emb': 8, 'mlp_hidden': 4}
TINY_WIDTHS = {'spectral': TINY, 'spatial': TINY, 'joint': TINY}


def random_sample(size=7, bands=200, seed=0):
    rng = np.random.default_rng(seed)
    return Sample(patch=rng.random((size, size, bands)).astype(np.float32), center=(0, 0))


@pytest.fixture
def scene(synthetic_scene, tmp_path):
    split = save_split_file(synthetic_scene.train_by_class, tmp_path / 'split.json')
    return build_scene('synthetic', synthetic_scene.cube, synthetic_scene.labels, split)


@pytest.fixture
def tiny_model():
    return build_classifier('factoformer', 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8, seed=0)


class TestFactoFormer:
    def test_published_dimensions(self):
        model = build_classifier('factoformer', 7, 200, 16, seed=0)
        patches = torch.rand(2, 7, 7, 200)
        assert model.features(patches).shape == (2, 96)
        assert model(patches).shape == (2, 16)
        assert model.head.fc1.in_features == 96 and model.head.fc1.out_features == 64
        assert sum(p.numel() for p in model.parameters()) == 144716

    def test_zero_head_gives_zero_logits(self, tiny_model):
        with torch.no_grad():
            for parameter in tiny_model.head.parameters():
                parameter.zero_()
        logits = classify(random_sample(3, 8), tiny_model)
        assert (logits == 0).all()
        torch.testing.assert_close(torch.softmax(logits, dim=-1), torch.full((3,), 1 / 3))

    def test_matches_module_composition(self):
        widths = {'spectral': {'layers': 1, 'heads': 2, 'emb': 4, 'mlp_hidden': 3},
                  'spatial': {'layers': 1, 'heads': 2, 'emb': 6, 'mlp_hidden': 3}}
        model = build_classifier('factoformer', 3, 5, 4, widths=widths, fusion_hidden=7, seed=1).double()
        sample = random_sample(3, 5, seed=2)

        def cls_output(raw, encoder):
            sequence = embed(raw, encoder.embedding).unsqueeze(0)
            return encode(sequence, encoder)[0, 0]

        double_sample = Sample(patch=sample.patch.astype(np.float64), center=sample.center)
        spectral = cls_output(tokenize_spectral(double_sample), model.branches['spectral'].encoder)
        spatial = cls_output(tokenize_spatial(double_sample), model.branches['spatial'].encoder)
        expected = model.head(torch.cat([spectral, spatial]))
        torch.testing.assert_close(classify(sample, model), expected, atol=1e-8, rtol=0)

    def test_single_branch_arches(self):
        for arch, width in (('spectral', 8), ('spatial', 8)):
            model = build_classifier(arch, 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8)
            assert list(model.branches) == [arch]
            assert model.features(torch.rand(1, 3, 3, 8)).shape == (1, width)

    def test_prediction_ignores_logit_offset(self, tiny_model):
        patches = torch.rand(6, 3, 3, 8)
        before = predict(tiny_model, patches)
        with torch.no_grad():
            tiny_model.head.fc2.bias += 5.0
        assert torch.equal(predict(tiny_model, patches), before)
        assert before.min() >= 1 and before.max() <= 3

    def test_deterministic(self, tiny_model):
        sample = random_sample(3, 8)
        assert torch.equal(classify(sample, tiny_model), classify(sample, tiny_model))

    def test_shape_mismatch(self, tiny_model):
        with pytest.raises(ShapeMismatchError):
            tiny_model(torch.rand(1, 5, 5, 8))

    def test_unknown_arch(self):
        with pytest.raises(ConfigError):
            classifier_spec('cnn', 3, 8, 3)

    def test_gradient_check(self):
        widths = {mode: {'layers': 1, 'heads': 2, 'emb': 4, 'mlp_hidden': 3} for mode in ('spectral', 'spatial')}
        model = build_classifier('factoformer', 3, 4, 2, widths=widths, fusion_hidden=3, seed=2)
        patches = torch.rand(2, 3, 3, 4, dtype=torch.float64)
        targets = torch.tensor([0, 1])
        assert gradient_check(model, lambda forward: batch_cross_entropy(forward(patches), targets))


class TestJointBaseline:
    def test_sequence_length(self):
        model = build_classifier('joint', 7, 200, 16, joint_group=10, seed=0)
        assert model.branches['joint'].encoder.config.seq_len == 981
        assert joint_baseline(random_sample(), 10, model).shape == (16,)

    def test_whole_spectrum_single_pixel(self):
        model = build_classifier('joint', 1, 6, 3, joint_group=6, widths=TINY_WIDTHS)
        assert model.branches['joint'].encoder.config.seq_len == 2
        assert joint_baseline(random_sample(1, 6), 6, model).shape == (3,)

    def test_wrong_model_or_group(self, tiny_model):
        with pytest.raises(ConfigError):
            joint_baseline(random_sample(3, 8), 10, tiny_model)
        joint = build_classifier('joint', 3, 8, 3, joint_group=4, widths=TINY_WIDTHS)
        with pytest.raises(ConfigError):
            joint_baseline(random_sample(3, 8), 2, joint)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy(torch.zeros(4), 3).item() == pytest.approx(math.log(4))

    def test_confident_logit(self):
        assert cross_entropy(torch.tensor([100.0, 0.0, 0.0]), 1).item() < 1e-6

    def test_matches_naive_softmax(self):
        logits = torch.randn(5, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
        for label in range(1, 6):
            values = logits.tolist()
            naive = -math.log(math.exp(values[label - 1]) / sum(math.exp(v) for v in values))
            assert abs(cross_entropy(logits, label).item() - naive) < 1e-12

    @pytest.mark.parametrize('label', [0, 5, -1])
    def test_label_out_of_range(self, label):
        with pytest.raises(LabelError):
            cross_entropy(torch.zeros(4), label)

    def test_batch_targets_checked(self):
        with pytest.raises(LabelError):
            batch_cross_entropy(torch.zeros(2, 3), torch.tensor([0, 3]))


class TestPretrainedInit:
    @pytest.fixture
    def checkpoints(self, scene, tmp_path):
        pool = scene.pretrain_set(3)
        paths = {}
        for mode in ('spectral', 'spatial'):
            config = EncoderConfig.for_mode(mode, 3, scene.bands, widths=TINY)
            result = pretrain(pool, mode, config, PretrainConfig(epochs=1, batch_size=16), seed=5, out_dir=tmp_path)
            paths[mode] = result.checkpoint
        return paths

    def test_zero_epochs_keeps_pretrained_encoders(self, scene, checkpoints):
        model = load_pretrained(build_classifier('factoformer', 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8),
                                checkpoints)
        finetune(model, scene.train_set(3), FinetuneConfig(epochs=0), seed=0)

        patches = torch.rand(4, 3, 3, 8)
        for mode, path in checkpoints.items():
            branch = model.branches[mode]
            stored = load_checkpoint(path).state('final')
            reference = Encoder(branch.encoder.config)
            reference.load_state_dict({key[len('encoder.'):]: value for key, value in stored.items()
                                       if key.startswith('encoder.')})
            tokens = tokenize(patches, mode)
            with torch.no_grad():
                assert torch.equal(branch.encoder(tokens), reference(tokens))

    def test_mismatches(self, checkpoints):
        model = build_classifier('factoformer', 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8)
        with pytest.raises(CheckpointError):
            load_pretrained(model, {'spatial': checkpoints['spectral']})
        with pytest.raises(CheckpointError):
            spectral_only = build_classifier('spectral', 3, 8, 3, widths=TINY_WIDTHS)
            load_pretrained(spectral_only, {'spatial': checkpoints['spatial']})
        wider = build_classifier('factoformer', 3, 8, 3, widths={'spectral': {**TINY, 'emb': 16}})
        with pytest.raises(CheckpointError):
            load_pretrained(wider, {'spectral': checkpoints['spectral']})
        with pytest.raises(CheckpointError):
            load_pretrained(model, {'spectral': checkpoints['spectral'].with_name('absent.ckpt')})

    def test_frozen_encoders_head_only(self, scene, checkpoints):
        model = load_pretrained(build_classifier('factoformer', 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8),
                                checkpoints)
        encoders = {name: value.clone() for name, value in model.branches.state_dict().items()}
        head = {name: value.clone() for name, value in model.head.state_dict().items()}
        train = scene.train_set(3)
        config = FinetuneConfig(epochs=8, lr=1e-3, batch_size=len(train), freeze_encoders=True)
        result = finetune(model, train, config, seed=0)

        losses = [record.loss for record in result.records]
        assert all(later < earlier for earlier, later in zip(losses, losses[1:]))
        for name, value in model.branches.state_dict().items():
            assert torch.equal(value, encoders[name])
        assert any(not torch.equal(value, head[name]) for name, value in model.head.state_dict().items())


class TestFinetune:
    def test_records_and_outputs(self, scene, tiny_model, tmp_path):
        train = scene.train_set(3)
        result = finetune(tiny_model, train, FinetuneConfig(epochs=2, batch_size=8, lr=1e-3), seed=1,
                          out_dir=tmp_path, dataset='synthetic')
        assert [record.epoch for record in result.records] == [1, 2]
        assert all(0.0 <= record.accuracy <= 1.0 for record in result.records)
        assert result.checkpoint == tmp_path / 'checkpoints' / 'finetune_factoformer.ckpt'
        assert result.loss_log.exists()
        assert np.isfinite(train_loss(tiny_model, train))

    def test_same_seed_same_log(self, scene):
        train = scene.train_set(3)
        runs = []
        for _ in range(2):
            model = build_classifier('factoformer', 3, 8, 3, widths=TINY_WIDTHS, fusion_hidden=8, seed=3)
            runs.append(finetune(model, train, FinetuneConfig(epochs=2, batch_size=8), seed=3).records)
        assert runs[0] == runs[1]

    def test_data_fraction(self, scene, tiny_model):
        train = scene.train_set(3)
        result = finetune(tiny_model, train, FinetuneConfig(epochs=1, data_fraction=0.5), seed=0)
        assert 3 <= result.train_size < len(train)

    def test_needs_labels(self, scene, tiny_model):
        with pytest.raises(ConfigError):
            finetune(tiny_model, scene.pretrain_set(3), FinetuneConfig(epochs=1))
        with pytest.raises(ConfigError):
            FinetuneConfig(epochs=-1).validate()

    @pytest.mark.parametrize('blowup', [float('nan'), float('inf')])
    def test_non_finite_loss_stops_the_run(self, scene, tiny_model, monkeypatch, blowup):
        monkeypatch.setattr('classifier.tasks.batch_cross_entropy',
                            lambda *args: batch_cross_entropy(*args) * blowup)
        with pytest.raises(NumericalError, match='fine-tuning loss at epoch 1'):
            finetune(tiny_model, scene.train_set(3), FinetuneConfig(epochs=1, batch_size=8), seed=0)

    def test_dataset_defaults(self):
        assert (FinetuneConfig.for_dataset('indian_pines').lr, FinetuneConfig.for_dataset('indian_pines').epochs) \
            == (3e-4, 80)
        assert FinetuneConfig.for_dataset('pavia_university').lr == 1e-2
        assert FinetuneConfig.for_dataset('houston2013', epochs=5).epochs == 5


class TestModelCheckpoints:
    def test_save_and_load(self, tiny_model, tmp_path):
        path = save_model(tiny_model, tmp_path / 'model.ckpt', dataset='synthetic', seed=0, epoch=2)
        loaded = load_model(path, dataset='synthetic', patch_size=3, classes=3)
        patches = torch.rand(3, 3, 3, 8)
        tiny_model.eval()
        with torch.no_grad():
            assert torch.equal(loaded(patches), tiny_model(patches))

    def test_reload_keeps_branch_order_with_published_widths(self, tmp_path):
        model = build_classifier('factoformer', 3, 8, 3, seed=0)
        path = save_model(model, tmp_path / 'model.ckpt', dataset='synthetic')
        loaded = load_model(path)
        assert list(loaded.branches) == ['spectral', 'spatial']
        assert loaded.head.fc1.in_features == 32 + 64
        patches = torch.rand(4, 3, 3, 8)
        model.eval()
        with torch.no_grad():
            assert torch.equal(loaded(patches), model(patches))
            assert torch.equal(loaded.features(patches)[:, :32], model.branches['spectral'](patches))

    @pytest.mark.parametrize('expected', [{'dataset': 'indian_pines'}, {'patch_size': 7}, {'classes': 16}])
    def test_scene_mismatch(self, tiny_model, tmp_path, expected):
        path = save_model(tiny_model, tmp_path / 'model.ckpt', dataset='synthetic')
        with pytest.raises(CheckpointError):
            load_model(path, **expected)

    def test_pretraining_checkpoint_is_not_a_model(self, scene, tmp_path):
        config = EncoderConfig.for_mode('spectral', 3, scene.bands, widths=TINY)
        result = pretrain(scene.pretrain_set(3), 'spectral', config, PretrainConfig(epochs=1), out_dir=tmp_path)
        with pytest.raises(CheckpointError):
            load_model(result.checkpoint)
