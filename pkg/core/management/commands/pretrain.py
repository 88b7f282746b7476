import click

from core.management.base import RunCommand
from core.pipeline import pretrain_encoder


class Command(RunCommand):
    help = 'Pre-train one encoder by masked-token reconstruction on the unlabeled pixels'

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--mode'], type=click.Choice(['spectral', 'spatial', 'joint']), required=True,
                         help='Which encoder to pre-train.'),
            click.Option(['--ratio'], type=float, help='Masking ratio in (0, 1).'),
            click.Option(['--patch'], type=int, help='Spatial patch size S (odd).'),
            click.Option(['--group'], type=int, help='Neighbouring bands per spectral token.'),
            click.Option(['--epochs'], type=click.IntRange(min=1), help='Override the epoch count.'),
        ]

    def overrides(self, options):
        return {
            'pretrain.ratio': options['ratio'],
            'patch_size': options['patch'],
            'band_group': options['group'],
            'pretrain.epochs': options['epochs'],
        }

    def handle(self, **options):
        context = self.prepare('pretrain', options)
        mode = options['mode']
        result = pretrain_encoder(context.config, context.scene, mode, context.out_dir)

        self.stdout.write(self.style.SUCCESS(f'Pre-trained {mode} encoder for {len(result.records)} epochs'))
        self.stdout.write(f'  Best loss: {result.best_loss:.6f} (epoch {result.best_epoch})')
        self.stdout.write(f'  Checkpoint: {result.checkpoint}')
        self.stdout.write(f'  Loss log: {result.loss_log}')
