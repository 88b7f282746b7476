"""
Whole-pipeline training runs on a generated scene. Marked slow: a few
minutes on one CPU thread.
"""

import pytest

from classifier.tasks import FinetuneConfig
from core.config import RunConfig
from core.pipeline import finetune_and_evaluate, pretrain_encoder
from evaluation.reports import evaluate
from hsi.io import save_split_file
from hsi.scene import build_scene
from hsi.synthetic import make_synthetic_scene

pytestmark = pytest.mark.slow

FINETUNE = {'epochs': 30, 'lr': 1e-3, 'batch_size': 16}


@pytest.fixture(scope='module')
def stripes(tmp_path_factory):
    synthetic = make_synthetic_scene(classes=3, bands=16, size=32, noise=0.02, seed=0)
    split = tmp_path_factory.mktemp('split') / 'split.json'
    save_split_file(synthetic.train_by_class, split)
    return build_scene('synthetic', synthetic.cube, synthetic.labels, split)


@pytest.fixture(scope='module')
def run_config():
    return RunConfig.from_dict({
        'dataset': {'name': 'synthetic', 'cube': 'cube.json', 'labels': 'labels.json'},
        'patch_size': 5,
        'seed': 0,
        'threads': 1,
        'pretrain': {'epochs': 50, 'batch_size': 32},
        'finetune': FINETUNE,
    })


def test_pretrained_factoformer_on_stripes(stripes, run_config, tmp_path):
    pretrained = {}
    for mode in ('spectral', 'spatial'):
        result = pretrain_encoder(run_config, stripes, mode, tmp_path / 'pretrained')
        assert result.losses[-1] < result.losses[0]
        pretrained[mode] = result.checkpoint

    _, with_pretraining = finetune_and_evaluate(run_config, stripes, 'factoformer', tmp_path / 'pretrained',
                                                pretrained=pretrained)
    _, from_scratch = finetune_and_evaluate(run_config, stripes, 'factoformer', tmp_path / 'scratch')

    assert with_pretraining.scores.overall_accuracy >= 0.95
    assert with_pretraining.scores.overall_accuracy >= from_scratch.scores.overall_accuracy


def test_scratch_fits_separable_training_set(stripes, run_config, tmp_path):
    result, _ = finetune_and_evaluate(run_config, stripes, 'factoformer', tmp_path,
                                      finetune_config=FinetuneConfig(**FINETUNE))
    train = evaluate(result.model, stripes.train_set(run_config.patch_size), stripes.num_classes)
    assert train.scores.overall_accuracy >= 0.99
