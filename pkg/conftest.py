import json
import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile('default', max_examples=50, deadline=None)
settings.register_profile('ci', max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile('dev', max_examples=10, deadline=None)
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'default'))


@pytest.fixture(autouse=True)
def single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def synthetic_scene():
    from hsi.synthetic import make_synthetic_scene

    return make_synthetic_scene(classes=3, bands=8, size=12, unlabeled_fraction=0.3, train_per_class=6, seed=3)


@pytest.fixture
def scene_dir(tmp_path, synthetic_scene):
    """A synthetic scene on disk with a run config next to it, tuned for a fast pipeline."""
    from hsi.io import save_cube, save_labels, save_split_file

    save_cube(synthetic_scene.cube, tmp_path / 'cube.json')
    save_labels(synthetic_scene.labels, tmp_path / 'labels.json', name='synthetic')
    save_split_file(synthetic_scene.train_by_class, tmp_path / 'split.json')
    config = {
        'dataset': {'name': 'synthetic', 'cube': 'cube.json', 'labels': 'labels.json', 'split': 'split.json'},
        'patch_size': 3,
        'seed': 7,
        'out': 'runs',
        'encoders': {
            'spectral': {'layers': 1, 'heads': 2, 'emb': 8, 'mlp_hidden': 4},
            'spatial': {'layers': 1, 'heads': 2, 'emb': 8, 'mlp_hidden': 4},
            'joint': {'layers': 1, 'heads': 2, 'emb': 8, 'mlp_hidden': 4},
        },
        'fusion_hidden': 8,
        'joint_group': 4,
        'pretrain': {'epochs': 2, 'batch_size': 16},
        'finetune': {'epochs': 2, 'batch_size': 8, 'lr': 1e-3},
    }
    (tmp_path / 'config.json').write_text(json.dumps(config))
    return tmp_path


@pytest.fixture
def paper_scale_enabled():
    return os.environ.get('FACTOFORMER_PAPER_SCALE') == '1'
