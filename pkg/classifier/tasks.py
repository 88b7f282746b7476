"""
Supervised fine-tuning of a classifier, from scratch or from pre-trained
encoders.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from classifier.losses import batch_cross_entropy
from classifier.models import TransformerClassifier, save_model
from core.exceptions import ConfigError
from core.training import (
    EpochRecord,
    SeedStreams,
    batch_order,
    build_optimizer,
    build_scheduler,
    check_finite,
    seed_everything,
    write_loss_log,
)
from factoformer_project import settings
from factoformer_project.runlog import get_logger
from factoformer_project.tracing import trace_function
from hsi.datasets import SampleSet
from hsi.preprocessing import stratified_fraction

logger = get_logger('training')


@dataclass
class FinetuneConfig:
    epochs: int = settings.FINETUNE_FALLBACK['epochs']
    lr: float = settings.FINETUNE_FALLBACK['lr']
    batch_size: int = settings.FINETUNE_FALLBACK['batch_size']
    weight_decay: float = settings.FINETUNE_FALLBACK['weight_decay']
    step_size: int = settings.LR_STEP_SIZE
    gamma: float = settings.LR_GAMMA
    freeze_encoders: bool = False
    data_fraction: float = 1.0

    @classmethod
    def for_dataset(cls, key, **overrides):
        """Per-scene learning rate and epoch count, everything else shared."""
        return cls(**{**settings.FINETUNE_DEFAULTS.get(key, {}), **overrides})

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.step_size < 1:
            raise ConfigError("fine-tuning epochs must be >= 0, batch_size and step_size >= 1")
        if self.lr <= 0 or not 0 < self.gamma <= 1:
            raise ConfigError(f"invalid learning-rate schedule: lr={self.lr}, gamma={self.gamma}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ConfigError(f"data fraction must lie in (0, 1], got {self.data_fraction}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class FinetuneResult:
    model: TransformerClassifier
    records: list = field(default_factory=list)
    train_size: int = 0
    checkpoint: Path = None
    loss_log: Path = None


def select_fraction(train: SampleSet, fraction: float, streams: SeedStreams) -> SampleSet:
    if fraction >= 1.0:
        return train
    kept, _ = stratified_fraction(np.arange(len(train)), train.labels, fraction, streams.rng('fraction'))
    return train.subset(kept)


@trace_function(name='finetune', attributes={'stage': 'finetune'})
def finetune(model: TransformerClassifier, train: SampleSet, config: FinetuneConfig = None, seed: int = 0,
             out_dir=None, threads: int = None, dataset=None, tag=None) -> FinetuneResult:
    """
    Train every parameter jointly (only the fusion head with
    ``freeze_encoders``) with cross-entropy. Logs loss and train accuracy
    per epoch; writes ``checkpoints/<tag>.ckpt`` and
    ``logs/<tag>_loss.ndjson`` under ``out_dir`` when given.
    """
    config = (config or FinetuneConfig()).validate()
    if train.labels is None or len(train) == 0:
        raise ConfigError("fine-tuning needs a non-empty labeled training set")
    tag = tag or f'finetune_{model.arch}'

    seed_everything(seed, threads)
    streams = SeedStreams(seed)
    train = select_fraction(train, config.data_fraction, streams)

    if config.freeze_encoders:
        for parameter in model.encoder_parameters():
            parameter.requires_grad_(False)
    trainable = [parameter for parameter in model.parameters() if parameter.requires_grad]
    optimizer = build_optimizer(trainable, config.lr, config.weight_decay)
    scheduler = build_scheduler(optimizer, config.step_size, config.gamma)

    logger.info(
        f"Fine-tuning {model.arch} on {len(train)} samples: {config.epochs} epochs, lr {config.lr}"
        + (" (encoders frozen)" if config.freeze_encoders else "")
    )
    result = FinetuneResult(model=model, train_size=len(train))
    for epoch in range(1, config.epochs + 1):
        model.train()
        lr = scheduler.get_last_lr()[0]
        total = 0.0
        correct = 0
        for indices in batch_order(len(train), config.batch_size, streams.rng('shuffle', epoch)):
            patches, targets = train.batch(indices)
            logits = model(patches)
            loss = batch_cross_entropy(logits, targets)
            check_finite(loss, f"fine-tuning loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(indices)
            correct += int((logits.detach().argmax(dim=-1) == targets).sum())
        scheduler.step()

        record = EpochRecord(epoch=epoch, loss=total / len(train), lr=lr, accuracy=correct / len(train))
        result.records.append(record)
        logger.info(
            f"[{model.arch}] epoch {epoch}/{config.epochs} loss {record.loss:.6f} "
            f"acc {record.accuracy:.4f} lr {lr:.3e}"
        )

    model.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint = save_model(
            model,
            out_dir / 'checkpoints' / f'{tag}.ckpt',
            dataset=dataset,
            seed=seed,
            epoch=config.epochs,
            meta={'finetune': config.to_dict(), 'train_size': len(train)},
        )
        result.loss_log = write_loss_log(result.records, out_dir / 'logs' / f'{tag}_loss.ndjson')
    return result


def train_loss(model: TransformerClassifier, samples: SampleSet) -> float:
    """Mean cross-entropy over a labeled set, without updating anything."""
    patches, targets = samples.batch(np.arange(len(samples)))
    with torch.no_grad():
        return batch_cross_entropy(model(patches), targets).item()
