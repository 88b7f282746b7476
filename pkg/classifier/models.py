"""
Classification models: one or two encoders whose CLS outputs are
concatenated and passed through a small MLP.

``factoformer`` runs a spectral and a spatial encoder over the same patch;
``spectral`` / ``spatial`` keep a single branch (factorization ablation);
``joint`` is the comparator over 1 x 1 x k spectral-spatial tokens.
"""

import logging

import torch
import torch.nn as nn

from core.exceptions import CheckpointError, ConfigError, ShapeMismatchError
from core.training import seed_everything
from factoformer_project import settings
from hsi.models import Sample
from tokenizer.tokens import tokenize
from transformer.checkpoints import load_checkpoint, save_checkpoint
from transformer.config import EncoderConfig
from transformer.encoder import Encoder
from transformer.layers import init_linear

logger = logging.getLogger(__name__)

ARCHES = {
    'factoformer': ('spectral', 'spatial'),
    'spectral': ('spectral',),
    'spatial': ('spatial',),
    'joint': ('joint',),
}


class FusionHead(nn.Module):
    """in -> hidden (GELU) -> classes."""

    def __init__(self, in_features: int, hidden: int, classes: int):
        super().__init__()
        self.fc1 = init_linear(nn.Linear(in_features, hidden))
        self.act = nn.GELU(approximate='none')
        self.fc2 = init_linear(nn.Linear(hidden, classes))

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBranch(nn.Module):
    """Tokenizes patches for one mode and returns the encoder's CLS output."""

    def __init__(self, config: EncoderConfig, mode: str, group: int = 1):
        super().__init__()
        self.mode = mode
        self.group = group
        self.encoder = Encoder(config)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        return self.encoder(tokenize(patches, self.mode, self.group))[:, 0]


class TransformerClassifier(nn.Module):
    def __init__(self, spec: dict):
        super().__init__()
        self.spec = spec
        self.branches = nn.ModuleDict()
        for name in ARCHES[spec['arch']]:
            branch = spec['branches'][name]
            config = EncoderConfig.from_dict(branch['encoder']).validate()
            self.branches[name] = EncoderBranch(config, branch['mode'], branch['group'])
        fused = sum(branch.encoder.config.emb for branch in self.branches.values())
        self.head = FusionHead(fused, spec['fusion_hidden'], spec['classes'])

    @property
    def arch(self):
        return self.spec['arch']

    @property
    def num_classes(self):
        return self.spec['classes']

    def check_patches(self, patches):
        expected = (self.spec['patch_size'], self.spec['patch_size'], self.spec['bands'])
        if tuple(patches.shape[-3:]) != expected:
            raise ShapeMismatchError(f"patches of shape {tuple(patches.shape[-3:])}, model expects {expected}")

    def features(self, patches: torch.Tensor) -> torch.Tensor:
        """(n, S, S, B) -> CLS outputs concatenated in the architecture's branch order."""
        self.check_patches(patches)
        return torch.cat([self.branches[name](patches) for name in ARCHES[self.arch]], dim=-1)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(patches))

    def encoder_parameters(self):
        return self.branches.parameters()


def classifier_spec(arch, patch_size, bands, classes, group=1, joint_group=None, widths=None,
                    fusion_hidden=None):
    """
    Model description stored with every checkpoint. ``widths`` maps a mode
    to overrides of its layers/heads/emb/mlp_hidden.
    """
    if arch not in ARCHES:
        raise ConfigError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHES)}")
    if classes < 1:
        raise ConfigError(f"need at least one class, got {classes}")
    joint_group = joint_group or settings.JOINT_GROUP
    widths = widths or {}
    branches = {}
    for mode in ARCHES[arch]:
        mode_group = joint_group if mode == 'joint' else (group if mode == 'spectral' else 1)
        config = EncoderConfig.for_mode(mode, patch_size, bands, mode_group, widths.get(mode))
        branches[mode] = {'mode': mode, 'group': mode_group, 'encoder': config.to_dict()}
    return {
        'arch': arch,
        'patch_size': patch_size,
        'bands': bands,
        'classes': classes,
        'fusion_hidden': fusion_hidden or settings.FUSION_HIDDEN,
        'branches': branches,
    }


def build_classifier(arch, patch_size, bands, classes, group=1, joint_group=None, widths=None,
                     fusion_hidden=None, seed=None, threads=None) -> TransformerClassifier:
    spec = classifier_spec(arch, patch_size, bands, classes, group, joint_group, widths, fusion_hidden)
    if seed is not None:
        seed_everything(seed, threads)
    return TransformerClassifier(spec)


def _sample_batch(sample: Sample):
    return torch.as_tensor(sample.patch, dtype=torch.float32).unsqueeze(0)


def classify(sample: Sample, model: TransformerClassifier) -> torch.Tensor:
    """Logits (C,) for one sample."""
    with torch.no_grad():
        return model(_sample_batch(sample).to(next(model.parameters()).dtype)).squeeze(0)


def joint_baseline(sample: Sample, k: int, model: TransformerClassifier) -> torch.Tensor:
    if model.arch != 'joint':
        raise ConfigError(f"joint_baseline needs a joint model, got {model.arch!r}")
    if k != model.branches['joint'].group:
        raise ConfigError(f"model was built for k={model.branches['joint'].group}, got k={k}")
    return classify(sample, model)


def predict(model: TransformerClassifier, patches: torch.Tensor) -> torch.Tensor:
    """1-based class predictions for a batch of patches."""
    with torch.no_grad():
        return model(patches).argmax(dim=-1) + 1


def load_pretrained(model: TransformerClassifier, checkpoints: dict, which='final'):
    """
    Load encoder weights from pre-training checkpoints keyed by branch name.
    Decoder parameters are discarded. The checkpoint's encoder config, mode
    and token group must match the branch it is loaded into.
    """
    for name, path in checkpoints.items():
        if name not in model.branches:
            raise CheckpointError(f"model {model.arch!r} has no {name!r} branch")
        branch = model.branches[name]
        checkpoint = load_checkpoint(path)
        config = checkpoint.config
        if config.get('mode') != branch.mode:
            raise CheckpointError(f"{path} was pre-trained in {config.get('mode')!r} mode, branch is {branch.mode!r}")
        if config.get('encoder') != branch.encoder.config.to_dict():
            raise CheckpointError(
                f"{path} encoder {config.get('encoder')} does not match {branch.encoder.config.to_dict()}"
            )
        if config.get('group', 1) != branch.group:
            raise CheckpointError(f"{path} uses token group {config.get('group')}, branch uses {branch.group}")
        state = {
            key[len('encoder.'):]: value
            for key, value in checkpoint.state(which).items()
            if key.startswith('encoder.')
        }
        try:
            branch.encoder.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointError(f"cannot load {path} into the {name} encoder: {exc}") from exc
        logger.info("Loaded %s encoder from %s (%s state)", name, path, which)
    return model


def save_model(model: TransformerClassifier, path, dataset=None, seed=None, epoch=None, meta=None):
    meta = {**(meta or {}), 'dataset': dataset}
    return save_checkpoint(
        path,
        states={'final': model.state_dict()},
        config=model.spec,
        seed=seed,
        epoch=epoch,
        tag=model.arch,
        meta=meta,
    )


def load_model(path, dataset=None, patch_size=None, classes=None) -> TransformerClassifier:
    """Rebuild a classifier from its checkpoint, checking it fits the scene it will be used on."""
    checkpoint = load_checkpoint(path)
    spec = checkpoint.config
    if spec.get('arch') not in ARCHES:
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    expected = {'dataset': (checkpoint.meta.get('dataset'), dataset),
                'patch_size': (spec['patch_size'], patch_size),
                'classes': (spec['classes'], classes)}
    for key, (stored, wanted) in expected.items():
        if wanted is not None and stored is not None and stored != wanted:
            raise CheckpointError(f"{path} was trained with {key}={stored}, got {wanted}")

    model = TransformerClassifier(spec)
    try:
        model.load_state_dict(checkpoint.state('final'))
    except RuntimeError as exc:
        raise CheckpointError(f"cannot load {path}: {exc}") from exc
    model.eval()
    return model
