"""
Masked-token pre-training loop for one factorized encoder (or the joint
comparator).
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

from core.exceptions import ConfigError
from core.training import (
    EpochRecord,
    SeedStreams,
    batch_order,
    build_optimizer,
    build_scheduler,
    check_finite,
    seed_everything,
    snapshot,
    write_loss_log,
)
from factoformer_project import settings
from factoformer_project.runlog import get_logger
from factoformer_project.tracing import trace_function
from hsi.datasets import SampleSet
from pretrain.masking import sample_mask, stack_plans
from pretrain.objective import MaskedTokenModel, masked_mse_batch
from tokenizer.tokens import check_mode, tokenize
from transformer.checkpoints import save_checkpoint
from transformer.config import EncoderConfig
from transformer.encoder import Encoder

logger = get_logger('training')


@dataclass
class PretrainConfig:
    epochs: int = settings.PRETRAIN_DEFAULTS['epochs']
    batch_size: int = settings.PRETRAIN_DEFAULTS['batch_size']
    lr: float = settings.PRETRAIN_DEFAULTS['lr']
    weight_decay: float = settings.PRETRAIN_DEFAULTS['weight_decay']
    ratio: float = settings.PRETRAIN_DEFAULTS['ratio']
    decoder_sees_sequence: bool = settings.PRETRAIN_DEFAULTS['decoder_sees_sequence']
    step_size: int = settings.LR_STEP_SIZE
    gamma: float = settings.LR_GAMMA

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.step_size < 1:
            raise ConfigError("pre-training epochs, batch_size and step_size must be >= 1")
        if self.lr <= 0 or not 0 < self.gamma <= 1:
            raise ConfigError(f"invalid learning-rate schedule: lr={self.lr}, gamma={self.gamma}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"masking ratio must lie strictly between 0 and 1, got {self.ratio}")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class PretrainResult:
    model: MaskedTokenModel
    records: list = field(default_factory=list)
    final_state: dict = None
    best_state: dict = None
    best_epoch: int = None
    best_loss: float = None
    checkpoint: Path = None
    loss_log: Path = None

    @property
    def losses(self):
        return [record.loss for record in self.records]


def checkpoint_config(mode, encoder_config: EncoderConfig, config: PretrainConfig, patch_size, bands, group):
    return {
        'mode': mode,
        'group': group,
        'patch_size': patch_size,
        'bands': bands,
        'encoder': encoder_config.to_dict(),
        'pretrain': config.to_dict(),
    }


@trace_function(name='pretrain', attributes={'stage': 'pretrain'})
def pretrain(samples: SampleSet, mode: str, encoder_config: EncoderConfig, config: PretrainConfig = None,
             seed: int = 0, group: int = 1, out_dir=None, threads: int = None, tag=None) -> PretrainResult:
    """
    Pre-train one encoder by reconstructing masked tokens.

    Every sample gets a fresh mask each epoch drawn from the (epoch, sample
    index) substream, so results depend on the seed alone. Writes
    ``checkpoints/<tag>.ckpt`` and ``logs/<tag>_loss.ndjson`` under
    ``out_dir`` when given (tag defaults to ``pretrain_<mode>``).
    """
    config = (config or PretrainConfig()).validate()
    check_mode(mode)
    tag = tag or f'pretrain_{mode}'
    if len(samples) == 0:
        raise ConfigError("pre-training set is empty")

    seed_everything(seed, threads)
    streams = SeedStreams(seed)
    model = MaskedTokenModel(Encoder(encoder_config), decoder_sees_sequence=config.decoder_sees_sequence)
    optimizer = build_optimizer(model.parameters(), config.lr, config.weight_decay)
    scheduler = build_scheduler(optimizer, config.step_size, config.gamma)
    num_tokens = encoder_config.num_tokens

    logger.info(
        f"Pre-training {mode} encoder on {len(samples)} samples: "
        f"{config.epochs} epochs, ratio {config.ratio}, N={num_tokens}"
    )
    result = PretrainResult(model=model)
    for epoch in range(1, config.epochs + 1):
        model.train()
        lr = scheduler.get_last_lr()[0]
        total = 0.0
        for indices in batch_order(len(samples), config.batch_size, streams.rng('shuffle', epoch)):
            patches, _ = samples.batch(indices)
            tokens = tokenize(patches, mode, group)
            plans = [sample_mask(num_tokens, config.ratio, streams.rng('mask', epoch, int(i))) for i in indices]
            masked, visible = stack_plans(plans)

            loss = masked_mse_batch(model(tokens, masked, visible), tokens, masked)
            check_finite(loss, f"pre-training loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(indices)
        scheduler.step()

        record = EpochRecord(epoch=epoch, loss=total / len(samples), lr=lr)
        result.records.append(record)
        if result.best_loss is None or record.loss < result.best_loss:
            result.best_loss = record.loss
            result.best_epoch = epoch
            result.best_state = snapshot(model)
        logger.info(f"[{mode}] epoch {epoch}/{config.epochs} loss {record.loss:.6f} lr {lr:.3e}")

    result.final_state = snapshot(model)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint = save_checkpoint(
            out_dir / 'checkpoints' / f'{tag}.ckpt',
            states={'final': result.final_state, 'best': result.best_state},
            config=checkpoint_config(mode, encoder_config, config, samples.patch_size, samples.bands, group),
            seed=seed,
            epoch=config.epochs,
            tag=mode,
            meta={'best_epoch': result.best_epoch, 'best_loss': result.best_loss},
        )
        result.loss_log = write_loss_log(result.records, out_dir / 'logs' / f'{tag}_loss.ndjson')
    logger.info(f"Pre-training {mode} done: best loss {result.best_loss:.6f} at epoch {result.best_epoch}")
    return result
