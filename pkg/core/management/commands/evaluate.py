import click

from classifier.models import load_model
from core.management.base import RunCommand
from evaluation.reports import evaluate, render_report, write_report


class Command(RunCommand):
    help = 'Evaluate a fine-tuned model on the test split'

    def add_arguments(self):
        return super().add_arguments() + [
            click.Option(['--model', 'model_path'], required=True, type=click.Path(dir_okay=False),
                         help='Fine-tuned model checkpoint.'),
        ]

    def handle(self, **options):
        context = self.prepare('evaluate', options)
        config, scene = context.config, context.scene
        model = load_model(options['model_path'], dataset=config.dataset, classes=scene.num_classes)
        patch_size = model.spec['patch_size']

        report = evaluate(model, scene.test_set(patch_size), scene.num_classes, scene.labels.class_names)
        title = f"{config.dataset} / {model.arch}"
        write_report(report, context.out_dir, f'evaluate_{model.arch}', seed=config.seed,
                     config_hash=config.hash, title=title)
        self.stdout.write(render_report(report, title))
