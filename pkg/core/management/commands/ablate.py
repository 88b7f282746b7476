import csv

import click

from core.management.base import RunCommand
from core.pipeline import finetune_and_evaluate, pretrain_encoder

GRIDS = {
    'ratio': (0.5, 0.6, 0.7, 0.8),
    'patch': (3, 5, 7, 9),
    'group': (1, 3, 5, 7),
    'data-fraction': (0.2, 0.4, 0.6, 0.8, 1.0),
}


def grid_settings(grid, values):
    """(label, config overrides) per cell; the ratio grid crosses spectral and spatial ratios."""
    if grid == 'ratio':
        return [
            (f'{spectral:g}/{spatial:g}', {'pretrain.ratio_by_mode': {'spectral': spectral, 'spatial': spatial}})
            for spectral in values for spatial in values
        ]
    key = {'patch': 'patch_size', 'group': 'band_group', 'data-fraction': 'finetune.data_fraction'}[grid]
    cast = float if grid == 'data-fraction' else int
    return [(f'{cast(value):g}', {key: cast(value)}) for value in values]


class Command(RunCommand):
    help = 'Run an ablation grid (masking ratio, patch size, band grouping or training-data fraction)'

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--grid'], type=click.Choice(sorted(GRIDS)), required=True),
            click.Option(['--values'], type=float, multiple=True,
                         help='Grid points (repeat the option); defaults to the standard grid.'),
            click.Option(['--pretrain-epochs', 'pretrain_epochs'], type=click.IntRange(min=1),
                         help='Override pre-training epochs for every cell.'),
            click.Option(['--finetune-epochs', 'finetune_epochs'], type=click.IntRange(min=0),
                         help='Override fine-tuning epochs for every cell.'),
        ]

    def overrides(self, options):
        return {
            'pretrain.epochs': options['pretrain_epochs'],
            'finetune.epochs': options['finetune_epochs'],
        }

    def handle(self, **options):
        context = self.prepare('ablate', options)
        grid = options['grid']
        values = options['values'] or GRIDS[grid]
        settings = grid_settings(grid, values)
        # validate every cell before any compute
        configs = [(label, context.config.override(**overrides)) for label, overrides in settings]

        pretrained_cache = {}
        rows = []
        for label, config in configs:
            cell_dir = context.out_dir / f"ablate_{grid}" / label.replace('/', '_')
            checkpoints = {}
            for mode in ('spectral', 'spatial'):
                key = (mode, config.pretrain_config(mode).ratio, config.patch_size, config.group_for(mode))
                if key not in pretrained_cache:
                    pretrained_cache[key] = pretrain_encoder(config, context.scene, mode, cell_dir).checkpoint
                checkpoints[mode] = pretrained_cache[key]
            _, report = finetune_and_evaluate(
                config, context.scene, 'factoformer', cell_dir, pretrained=checkpoints, tag='finetune_factoformer',
            )
            scores = report.scores
            rows.append({
                'setting': label,
                'OA': round(100 * scores.overall_accuracy, 2),
                'AA': round(100 * scores.average_accuracy, 2),
                'kappa': round(scores.kappa, 4),
            })
            self.stdout.write(f"  {grid}={label}: OA {rows[-1]['OA']:.2f} AA {rows[-1]['AA']:.2f} "
                              f"kappa {rows[-1]['kappa']:.4f}")

        path = context.out_dir / 'reports' / f'ablate_{grid}.csv'
        with path.open('w', newline='') as handle:
            writer = csv.DictWriter(handle, fieldnames=['setting', 'OA', 'AA', 'kappa'])
            writer.writeheader()
            writer.writerows(rows)
        self.stdout.write(self.style.SUCCESS(f'{len(rows)} cells written to {path}'))
