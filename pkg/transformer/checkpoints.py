"""
Checkpoint format: a JSON manifest (config, tensor names, shapes, byte
offsets, seed, epoch, tag) next to a raw little-endian float32 payload at
``<manifest>.raw``. One file can hold several named states (final, best).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

FORMAT = 'factoformer-checkpoint'
VERSION = 1
PAYLOAD_DTYPE = np.dtype('<f4')


@dataclass
class Checkpoint:
    manifest: dict
    states: dict = field(default_factory=dict)

    @property
    def config(self):
        return self.manifest.get('config', {})

    @property
    def meta(self):
        return self.manifest.get('meta', {})

    def state(self, which='final'):
        try:
            return self.states[which]
        except KeyError:
            raise CheckpointError(f"checkpoint has no {which!r} state; available: {sorted(self.states)}") from None


def payload_path(path):
    path = Path(path)
    return path.with_name(path.name + '.raw')


def save_checkpoint(path, states, config, seed=None, epoch=None, tag=None, meta=None):
    """``states`` maps a state name to a state dict of float tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries = {}
    chunks = []
    offset = 0
    for state_name, tensors in states.items():
        entries[state_name] = []
        for name, tensor in tensors.items():
            array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=PAYLOAD_DTYPE)
            entries[state_name].append({
                'name': name,
                'shape': list(array.shape),
                'offset': offset,
                'nbytes': array.nbytes,
            })
            chunks.append(array.tobytes())
            offset += array.nbytes

    manifest = {
        'format': FORMAT,
        'version': VERSION,
        'dtype': 'f32',
        'config': config,
        'seed': seed,
        'epoch': epoch,
        'tag': tag,
        'meta': meta or {},
        'states': entries,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    payload_path(path).write_bytes(b''.join(chunks))
    logger.info("Saved checkpoint %s (%d bytes)", path, offset)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    if not payload_path(path).exists():
        raise CheckpointError(f"checkpoint payload not found: {payload_path(path)}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint manifest {path}: {exc}") from exc
    if manifest.get('format') != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} manifest")

    payload = payload_path(path).read_bytes()
    expected = sum(entry['nbytes'] for entries in manifest['states'].values() for entry in entries)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, manifest describes {expected}")

    states = {}
    for state_name, entries in manifest['states'].items():
        tensors = {}
        for entry in entries:
            count = entry['nbytes'] // PAYLOAD_DTYPE.itemsize
            array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=entry['offset'])
            tensors[entry['name']] = torch.from_numpy(array.reshape(entry['shape']).astype(np.float32))
        states[state_name] = tensors
    return Checkpoint(manifest=manifest, states=states)
