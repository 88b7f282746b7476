"""
Checks against the real benchmark scenes, looked up as
``<FACTOFORMER_DATA_ROOT>/<key>/{cube,labels,split}.json``. Scenes that are
not on disk are skipped.
"""

import pytest

from core.config import RunConfig
from core.pipeline import finetune_and_evaluate, pretrain_encoder
from factoformer_project import settings
from hsi.io import load_labels
from hsi.registry import DATASETS
from hsi.scene import load_scene
from hsi.splits import enumerate_splits


def scene_files(key):
    root = settings.DATA_ROOT / key
    return {name: root / f'{name}.json' for name in ('cube', 'labels', 'split')}


def require(key, *names):
    files = scene_files(key)
    missing = [str(files[name]) for name in names if not files[name].exists()]
    if missing:
        pytest.skip(f"{key} data not present: {', '.join(missing)}")
    return files


@pytest.mark.parametrize('key', sorted(DATASETS))
def test_standard_split_counts(key):
    files = require(key, 'labels', 'split')
    info = DATASETS[key]
    split = enumerate_splits(load_labels(files['labels']), files['split'])

    assert split.counts() == {'pretrain': info.pretrain_count, 'train': info.train_total, 'test': info.test_total}
    train, test = split.per_class_counts(info.num_classes)
    assert train.tolist() == list(info.train_counts)
    assert test.tolist() == list(info.test_counts)


@pytest.fixture
def indian_pines(paper_scale_enabled):
    if not paper_scale_enabled:
        pytest.skip("set FACTOFORMER_PAPER_SCALE=1 to run the full Indian Pines protocol")
    files = require('indian_pines', 'cube', 'labels', 'split')
    return files, load_scene('indian_pines', files['cube'], files['labels'], files['split'])


def ip_config(files, patch_size=7):
    return RunConfig.from_dict({
        'dataset': {'name': 'indian_pines', **{name: str(path) for name, path in files.items()}},
        'patch_size': patch_size,
        'seed': 0,
    })


def pretrained_run(config, scene, out_dir):
    checkpoints = {mode: pretrain_encoder(config, scene, mode, out_dir).checkpoint for mode in ('spectral', 'spatial')}
    _, report = finetune_and_evaluate(config, scene, 'factoformer', out_dir, pretrained=checkpoints)
    return report


@pytest.mark.slow
@pytest.mark.paper_scale
def test_indian_pines_protocol(indian_pines, tmp_path):
    files, scene = indian_pines
    config = ip_config(files)

    pretrained = pretrained_run(config, scene, tmp_path / 'pretrained')
    _, scratch = finetune_and_evaluate(config, scene, 'factoformer', tmp_path / 'scratch')

    assert pretrained.scores.overall_accuracy >= 0.9130 - 0.03
    assert pretrained.scores.overall_accuracy > scratch.scores.overall_accuracy


@pytest.mark.slow
@pytest.mark.paper_scale
def test_patch_seven_is_best(indian_pines, tmp_path):
    files, scene = indian_pines
    accuracy = {
        size: pretrained_run(ip_config(files, size), scene, tmp_path / f'patch{size}').scores.overall_accuracy
        for size in (3, 5, 7, 9)
    }
    assert max(accuracy, key=accuracy.get) == 7
