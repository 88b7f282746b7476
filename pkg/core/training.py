"""
Training plumbing shared by pre-training and fine-tuning: seeded random
streams, the Adam + step-decay optimizer contract, epoch records and
finite-loss guards.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from core.exceptions import NumericalError
from factoformer_project import settings

# Stream ids keep each consumer of randomness independent of the others.
STREAMS = {
    'init': 0,
    'shuffle': 1,
    'mask': 2,
    'fraction': 3,
}


class SeedStreams:
    """
    Splittable random streams derived from one run seed.

    ``rng('mask', epoch, index)`` always returns the same generator for the
    same key, so the order in which samples are processed (or the number of
    worker threads) never changes what a sample sees.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _sequence(self, stream: str, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(STREAMS[stream], *map(int, key)))

    def rng(self, stream: str, *key: int) -> np.random.Generator:
        return np.random.default_rng(self._sequence(stream, *key))

    def torch_seed(self, stream: str, *key: int) -> int:
        return int(self._sequence(stream, *key).generate_state(1, dtype=np.uint64)[0] >> 1)


def seed_everything(seed: int, threads: int = None):
    """Seed torch and pin the thread count; one thread is exactly deterministic."""
    threads = threads or settings.DEFAULT_THREADS
    torch.manual_seed(SeedStreams(seed).torch_seed('init'))
    torch.set_num_threads(int(threads))
    torch.use_deterministic_algorithms(True)


def build_optimizer(parameters, lr: float, weight_decay: float = 0.0) -> torch.optim.Adam:
    return torch.optim.Adam(
        parameters,
        lr=lr,
        betas=settings.ADAM_BETAS,
        eps=settings.ADAM_EPS,
        weight_decay=weight_decay,
    )


def build_scheduler(optimizer, step_size: int = None, gamma: float = None):
    """Step decay applied once per epoch."""
    return torch.optim.lr_scheduler.StepLR(
        optimizer,
        step_size=step_size or settings.LR_STEP_SIZE,
        gamma=settings.LR_GAMMA if gamma is None else gamma,
    )


def lr_at_epoch(base_lr: float, epoch: int, step_size: int = None, gamma: float = None) -> float:
    """Learning rate in effect during 1-based ``epoch`` under step decay."""
    step_size = step_size or settings.LR_STEP_SIZE
    gamma = settings.LR_GAMMA if gamma is None else gamma
    return base_lr * gamma ** ((epoch - 1) // step_size)


def check_finite(value: torch.Tensor, context: str):
    if not torch.isfinite(value).all():
        raise NumericalError(f"non-finite {context}: {value.detach().flatten()[:4].tolist()}")


def batch_order(size: int, batch_size: int, rng: np.random.Generator = None):
    """Split ``range(size)`` into batches, shuffled when a generator is given."""
    order = rng.permutation(size) if rng is not None else np.arange(size)
    return [order[start:start + batch_size] for start in range(0, size, batch_size)]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    accuracy: float = None

    def to_dict(self):
        record = asdict(self)
        if record['accuracy'] is None:
            del record['accuracy']
        return record


def write_loss_log(records, path):
    """Newline-delimited JSON, one record per epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + '\n')
    return path


def read_loss_log(path):
    with Path(path).open() as handle:
        return [EpochRecord(**json.loads(line)) for line in handle if line.strip()]


def snapshot(module: torch.nn.Module):
    """Detached copy of a module's state dict."""
    return {name: tensor.detach().clone() for name, tensor in module.state_dict().items()}
