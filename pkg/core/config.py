"""
Run configuration: a JSON document validated against RUN_CONFIG_SCHEMA,
with every omitted value filled from the defaults in settings.

Example::

    {
      "dataset": {"name": "indian_pines", "cube": "ip/cube.json",
                  "labels": "ip/labels.json", "split": "ip/split.json"},
      "patch_size": 7,
      "seed": 1,
      "pretrain": {"ratio": 0.7},
      "finetune": {"lr": 3e-4, "epochs": 80}
    }
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from classifier.tasks import FinetuneConfig
from core.exceptions import ConfigError
from factoformer_project import settings
from pretrain.tasks import PretrainConfig

_widths = {
    'type': 'object',
    'properties': {
        'layers': {'type': 'integer', 'minimum': 1},
        'heads': {'type': 'integer', 'minimum': 1},
        'emb': {'type': 'integer', 'minimum': 1},
        'mlp_hidden': {'type': 'integer', 'minimum': 1},
    },
    'additionalProperties': False,
}
_ratio = {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1}

RUN_CONFIG_SCHEMA = {
    '$schema': 'https://json-schema.org/draft/2020-12/schema',
    'type': 'object',
    'required': ['dataset'],
    'properties': {
        'dataset': {
            'type': 'object',
            'required': ['name', 'cube', 'labels'],
            'properties': {
                'name': {'type': 'string', 'minLength': 1},
                'cube': {'type': 'string'},
                'labels': {'type': 'string'},
                'split': {'type': ['string', 'null']},
            },
            'additionalProperties': False,
        },
        'patch_size': {'type': 'integer', 'minimum': 1},
        'band_group': {'type': 'integer', 'minimum': 1},
        'joint_group': {'type': 'integer', 'minimum': 1},
        'fusion_hidden': {'type': 'integer', 'minimum': 1},
        'seed': {'type': 'integer', 'minimum': 0},
        'threads': {'type': 'integer', 'minimum': 1},
        'out': {'type': 'string'},
        'encoders': {
            'type': 'object',
            'properties': {'spectral': _widths, 'spatial': _widths, 'joint': _widths},
            'additionalProperties': False,
        },
        'pretrain': {
            'type': 'object',
            'properties': {
                'epochs': {'type': 'integer', 'minimum': 1},
                'batch_size': {'type': 'integer', 'minimum': 1},
                'lr': {'type': 'number', 'exclusiveMinimum': 0},
                'weight_decay': {'type': 'number', 'minimum': 0},
                'ratio': _ratio,
                'ratio_by_mode': {
                    'type': 'object',
                    'properties': {'spectral': _ratio, 'spatial': _ratio, 'joint': _ratio},
                    'additionalProperties': False,
                },
                'decoder_sees_sequence': {'type': 'boolean'},
                'step_size': {'type': 'integer', 'minimum': 1},
                'gamma': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1},
            },
            'additionalProperties': False,
        },
        'finetune': {
            'type': 'object',
            'properties': {
                'epochs': {'type': 'integer', 'minimum': 0},
                'batch_size': {'type': 'integer', 'minimum': 1},
                'lr': {'type': 'number', 'exclusiveMinimum': 0},
                'weight_decay': {'type': 'number', 'minimum': 0},
                'step_size': {'type': 'integer', 'minimum': 1},
                'gamma': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1},
                'freeze_encoders': {'type': 'boolean'},
                'data_fraction': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1},
            },
            'additionalProperties': False,
        },
    },
    'additionalProperties': False,
}


def _error_path(error):
    return '.'.join(str(part) for part in error.absolute_path) or '<root>'


def validate_document(document):
    validator = jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(document), key=lambda error: list(error.absolute_path))
    if errors:
        details = '; '.join(f"{_error_path(error)}: {error.message}" for error in errors)
        raise ConfigError(f"invalid run config: {details}")


def with_defaults(document):
    """Effective config: the document with every default written out."""
    effective = copy.deepcopy(document)
    name = effective['dataset']['name']
    effective['dataset'].setdefault('split', None)
    effective.setdefault('patch_size', settings.DEFAULT_PATCH_SIZE)
    effective.setdefault('band_group', settings.DEFAULT_BAND_GROUP)
    effective.setdefault('joint_group', settings.JOINT_GROUP)
    effective.setdefault('fusion_hidden', settings.FUSION_HIDDEN)
    effective.setdefault('seed', 0)
    effective.setdefault('threads', settings.DEFAULT_THREADS)

    encoders = effective.setdefault('encoders', {})
    for mode, defaults in (('spectral', settings.SPECTRAL_ENCODER), ('spatial', settings.SPATIAL_ENCODER),
                           ('joint', settings.JOINT_ENCODER)):
        encoders[mode] = {**defaults, **encoders.get(mode, {})}

    pretrain = effective.setdefault('pretrain', {})
    effective['pretrain'] = {**PretrainConfig().to_dict(), 'ratio_by_mode': {}, **pretrain}
    finetune = effective.setdefault('finetune', {})
    effective['finetune'] = {**FinetuneConfig.for_dataset(name).to_dict(), **finetune}
    return effective


def config_hash(config) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class RunConfig:
    data: dict
    base_dir: Path = None

    @classmethod
    def from_dict(cls, document, base_dir=None):
        validate_document(document)
        config = cls(data=with_defaults(document), base_dir=Path(base_dir) if base_dir else None)
        return config.validate()

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from exc
        return cls.from_dict(document, base_dir=path.resolve().parent)

    def validate(self):
        """Semantic checks beyond the schema, before any compute."""
        self.pretrain_config('spectral')
        self.pretrain_config('spatial')
        self.finetune_config()
        if self.patch_size % 2 == 0:
            raise ConfigError(f"patch size must be odd, got {self.patch_size}")
        for mode, widths in self.data['encoders'].items():
            if widths['emb'] % widths['heads']:
                raise ConfigError(f"{mode} encoder: emb {widths['emb']} is not divisible by {widths['heads']} heads")
        return self

    def override(self, **values):
        """
        Copy with dotted-key overrides applied (``pretrain.ratio=0.5``);
        ``None`` values are ignored. The copy is re-validated.
        """
        data = copy.deepcopy(self.data)
        for key, value in values.items():
            if value is None:
                continue
            target = data
            *parents, leaf = key.split('.')
            for parent in parents:
                target = target.setdefault(parent, {})
            target[leaf] = value
        if values.get('pretrain.ratio') is not None:
            data['pretrain']['ratio_by_mode'] = {}
        validate_document(data)
        return RunConfig(data=data, base_dir=self.base_dir).validate()

    @property
    def hash(self):
        return config_hash(self.data)

    @property
    def dataset(self):
        return self.data['dataset']['name']

    @property
    def patch_size(self):
        return self.data['patch_size']

    @property
    def band_group(self):
        return self.data['band_group']

    @property
    def joint_group(self):
        return self.data['joint_group']

    @property
    def fusion_hidden(self):
        return self.data['fusion_hidden']

    @property
    def seed(self):
        return self.data['seed']

    @property
    def threads(self):
        return self.data['threads']

    @property
    def widths(self):
        return self.data['encoders']

    def group_for(self, mode):
        return {'spectral': self.band_group, 'spatial': 1, 'joint': self.joint_group}[mode]

    def pretrain_config(self, mode) -> PretrainConfig:
        values = dict(self.data['pretrain'])
        by_mode = values.pop('ratio_by_mode')
        values['ratio'] = by_mode.get(mode, values['ratio'])
        return PretrainConfig(**values).validate()

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(**self.data['finetune']).validate()

    def resolve(self, value):
        """Relative paths resolve against the config's directory, then the data root."""
        if value is None:
            return None
        path = Path(value)
        if path.is_absolute():
            return path
        if self.base_dir is not None and (self.base_dir / path).exists():
            return self.base_dir / path
        return settings.DATA_ROOT / path

    def input_paths(self):
        dataset = self.data['dataset']
        return {key: self.resolve(dataset[key]) for key in ('cube', 'labels', 'split') if dataset.get(key)}

    def output_dir(self, override=None):
        if override:
            return Path(override)
        out = self.data.get('out', 'runs')
        return Path(out) if Path(out).is_absolute() or self.base_dir is None else self.base_dir / out
