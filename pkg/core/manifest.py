"""
Reproducibility manifests: what a command ran with (effective config, its
hash, seed, thread count, library versions) and content hashes of every
input file.
"""

import hashlib
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

import factoformer_project

CHUNK = 1 << 20


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open('rb') as handle:
        for chunk in iter(lambda: handle.read(CHUNK), b''):
            digest.update(chunk)
    return digest.hexdigest()


def input_digests(paths: dict) -> dict:
    """sha256 of every input; a portable-format header also covers its ``.raw`` payload."""
    digests = {}
    for key, path in paths.items():
        if path is None:
            continue
        path = Path(path)
        if not path.exists():
            digests[key] = {'path': str(path), 'missing': True}
            continue
        digests[key] = {'path': str(path), 'sha256': file_digest(path)}
        payload = path.with_suffix('.raw')
        if path.suffix == '.json' and payload.exists():
            digests[key]['payload_sha256'] = file_digest(payload)
    return digests


def build_manifest(command, config, config_hash, seed, threads, inputs=None, extra=None):
    return {
        'command': command,
        'config': config,
        'config_hash': config_hash,
        'seed': seed,
        'threads': threads,
        'inputs': input_digests(inputs or {}),
        'versions': {
            'factoformer': factoformer_project.__version__,
            'python': platform.python_version(),
            'torch': torch.__version__,
            'numpy': np.__version__,
        },
        'argv': sys.argv[1:],
        'created': datetime.now(timezone.utc).isoformat(),
        **(extra or {}),
    }


def write_manifest(out_dir, command, config, config_hash, seed, threads, inputs=None, extra=None):
    path = Path(out_dir) / f'manifest_{command}.json'
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(command, config, config_hash, seed, threads, inputs, extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path
