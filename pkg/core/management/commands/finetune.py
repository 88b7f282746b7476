import click

from classifier.models import ARCHES
from core.management.base import CommandError, RunCommand
from core.pipeline import finetune_and_evaluate


class Command(RunCommand):
    help = 'Fine-tune a classifier end-to-end (from scratch or pre-trained encoders) and evaluate it'

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--arch'], type=click.Choice(sorted(ARCHES)), default='factoformer', show_default=True),
            click.Option(['--from-pretrained', 'from_pretrained'], nargs=2, type=click.Path(dir_okay=False),
                         metavar='SPECTRAL SPATIAL', help='Pre-trained spectral and spatial checkpoints.'),
            click.Option(['--joint-ckpt', 'joint_ckpt'], type=click.Path(dir_okay=False),
                         help='Pre-trained joint encoder checkpoint (--arch joint).'),
            click.Option(['--scratch'], is_flag=True, help='Random initialization.'),
            click.Option(['--patch'], type=int, help='Spatial patch size S (odd).'),
            click.Option(['--group'], type=int, help='Neighbouring bands per spectral token.'),
            click.Option(['--epochs'], type=click.IntRange(min=0), help='Override the epoch count.'),
            click.Option(['--data-fraction', 'data_fraction'], type=float,
                         help='Fraction of each class of the train split to use.'),
            click.Option(['--freeze-encoders', 'freeze_encoders'], is_flag=True,
                         help='Train the fusion head only.'),
        ]

    def overrides(self, options):
        return {
            'patch_size': options['patch'],
            'band_group': options['group'],
            'finetune.epochs': options['epochs'],
            'finetune.data_fraction': options['data_fraction'],
            'finetune.freeze_encoders': True if options['freeze_encoders'] else None,
        }

    def pretrained_paths(self, options):
        arch = options['arch']
        if options['scratch']:
            if options['from_pretrained'] or options['joint_ckpt']:
                raise CommandError('--scratch cannot be combined with pre-trained checkpoints')
            return None
        if arch == 'joint':
            if not options['joint_ckpt']:
                raise CommandError('--arch joint needs --joint-ckpt or --scratch')
            return {'joint': options['joint_ckpt']}
        if not options['from_pretrained']:
            raise CommandError('pass --from-pretrained SPECTRAL SPATIAL or --scratch')
        spectral, spatial = options['from_pretrained']
        return {branch: path for branch, path in (('spectral', spectral), ('spatial', spatial))
                if branch in ARCHES[arch]}

    def handle(self, **options):
        pretrained = self.pretrained_paths(options)
        context = self.prepare('finetune', options)
        arch = options['arch']
        tag = f"finetune_{arch}_{'pretrained' if pretrained else 'scratch'}"
        result, report = finetune_and_evaluate(
            context.config, context.scene, arch, context.out_dir, pretrained=pretrained, tag=tag,
        )

        scores = report.scores
        self.stdout.write(self.style.SUCCESS(f'Fine-tuned {arch} on {result.train_size} samples'))
        self.stdout.write(
            f'  OA {100 * scores.overall_accuracy:.2f}  AA {100 * scores.average_accuracy:.2f}  '
            f'kappa {scores.kappa:.4f}'
        )
        self.stdout.write(f'  Model: {result.checkpoint}')
        self.stdout.write(f'  Report: {context.out_dir / "reports" / (tag + ".txt")}')
