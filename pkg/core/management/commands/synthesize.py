import json
from pathlib import Path

import click

from core.management.base import BaseCommand
from hsi.io import save_cube, save_labels, save_split_file
from hsi.synthetic import make_synthetic_scene


class Command(BaseCommand):
    help = 'Write a synthetic scene (cube, labels, split) and a run config that uses it'

    def add_arguments(self):
        return [
            click.Option(['--out', 'out_dir'], required=True, type=click.Path(file_okay=False)),
            click.Option(['--classes'], type=click.IntRange(min=1), default=3, show_default=True),
            click.Option(['--bands'], type=click.IntRange(min=1), default=16, show_default=True),
            click.Option(['--size'], type=click.IntRange(min=2), default=32, show_default=True),
            click.Option(['--noise'], type=float, default=0.02, show_default=True),
            click.Option(['--unlabeled-fraction', 'unlabeled_fraction'], type=float, default=0.3, show_default=True),
            click.Option(['--train-per-class', 'train_per_class'], type=click.IntRange(min=1), default=20,
                         show_default=True),
            click.Option(['--patch'], type=int, default=5, show_default=True),
            click.Option(['--seed'], type=int, default=0, show_default=True),
        ]

    def handle(self, **options):
        out_dir = Path(options['out_dir'])
        scene = make_synthetic_scene(
            classes=options['classes'],
            bands=options['bands'],
            size=options['size'],
            noise=options['noise'],
            unlabeled_fraction=options['unlabeled_fraction'],
            train_per_class=options['train_per_class'],
            seed=options['seed'],
        )
        save_cube(scene.cube, out_dir / 'cube.json')
        save_labels(scene.labels, out_dir / 'labels.json', name='synthetic')
        save_split_file(scene.train_by_class, out_dir / 'split.json')

        config = {
            'dataset': {'name': 'synthetic', 'cube': 'cube.json', 'labels': 'labels.json', 'split': 'split.json'},
            'patch_size': options['patch'],
            'seed': options['seed'],
            'out': 'runs',
        }
        config_path = out_dir / 'config.json'
        config_path.write_text(json.dumps(config, indent=2))

        self.stdout.write(self.style.SUCCESS(
            f"Synthetic scene {options['size']}x{options['size']}x{options['bands']} "
            f"with {options['classes']} classes written to {out_dir}"
        ))
        self.stdout.write(f'  Run config: {config_path}')
