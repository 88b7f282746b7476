import click

from classifier.models import load_model
from core.management.base import RunCommand
from evaluation.maps import export_map, model_predictor, palette_sidecar


class Command(RunCommand):
    help = 'Write a classification map (binary PPM) of the scene'

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--model', 'model_path'], required=True, type=click.Path(dir_okay=False),
                         help='Fine-tuned model checkpoint.'),
            click.Option(['--all-pixels', 'all_pixels'], is_flag=True,
                         help='Predict unlabeled pixels too instead of leaving them black.'),
        ]

    def handle(self, **options):
        context = self.prepare('export_map', options)
        scene = context.scene
        model = load_model(options['model_path'], dataset=context.config.dataset, classes=scene.num_classes)

        predictor = model_predictor(model, scene.extractor(model.spec['patch_size']))
        suffix = '_all' if options['all_pixels'] else ''
        path = context.out_dir / 'maps' / f'{context.config.dataset}_{model.arch}{suffix}.ppm'
        export_map(predictor, scene.labels, path, all_pixels=options['all_pixels'])

        self.stdout.write(self.style.SUCCESS(f'Map written to {path}'))
        self.stdout.write(f'  Palette: {palette_sidecar(path)}')
