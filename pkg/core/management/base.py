"""
Base classes for management commands.

A command subclasses ``BaseCommand``, declares its click parameters in
``add_arguments`` and does its work in ``handle``. Library errors become
``CommandError`` with the exit code their class carries.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import click

from core.config import RunConfig
from core.exceptions import FactoFormerError
from core.manifest import write_manifest
from factoformer_project import settings
from factoformer_project.runlog import set_run_id
from factoformer_project.tracing import configure_opentelemetry
from hsi.scene import Scene, load_scene

logger = logging.getLogger(__name__)


class CommandError(click.ClickException):
    def __init__(self, message, exit_code=2):
        super().__init__(message)
        self.exit_code = exit_code


class Style:
    def SUCCESS(self, text):
        return click.style(text, fg='green')

    def WARNING(self, text):
        return click.style(text, fg='yellow')

    def ERROR(self, text):
        return click.style(text, fg='red')

    def HEADING(self, text):
        return click.style(text, bold=True)


class OutputWrapper:
    def __init__(self, err=False):
        self.err = err

    def write(self, message='', style_func=None):
        click.echo(style_func(message) if style_func else message, err=self.err)


class BaseCommand:
    help = ''

    def __init__(self):
        self.stdout = OutputWrapper()
        self.stderr = OutputWrapper(err=True)
        self.style = Style()

    def add_arguments(self):
        return []

    def handle(self, **options):
        raise NotImplementedError('subclasses of BaseCommand must provide a handle() method')

    def execute(self, **options):
        try:
            return self.handle(**options)
        except FactoFormerError as exc:
            logger.error("%s failed: %s", type(self).__module__.rsplit('.', 1)[-1], exc)
            raise CommandError(str(exc), exit_code=exc.exit_code) from exc

    @classmethod
    def as_click_command(cls, name):
        command = cls()
        return click.Command(name, params=command.add_arguments(), callback=command.execute, help=cls.help)


@dataclass
class RunContext:
    name: str
    config: RunConfig
    out_dir: Path
    scene: Scene = None

    @property
    def seed(self):
        return self.config.seed

    @property
    def threads(self):
        return self.config.threads


def run_options():
    """Options every config-driven command accepts."""
    return [
        click.Option(['--config', 'config_path'], required=True, type=click.Path(dir_okay=False),
                     help='Run config (JSON).'),
        click.Option(['--seed'], type=int, help='Override the config seed.'),
        click.Option(['--threads'], type=click.IntRange(min=1), help='Worker threads (1 is exactly deterministic).'),
        click.Option(['--out', 'out_dir'], type=click.Path(file_okay=False), help='Output directory.'),
    ]


class RunCommand(BaseCommand):
    """A command that loads a run config and its scene and writes under --out."""

    load_scene = True

    def add_arguments(self):
        return run_options()

    def overrides(self, options):
        return {}

    def prepare(self, name, options) -> RunContext:
        config = RunConfig.load(options['config_path']).override(
            seed=options.get('seed'),
            threads=options.get('threads'),
            **self.overrides(options),
        )
        out_dir = config.output_dir(options.get('out_dir'))
        for subdir in settings.OUTPUT_SUBDIRS:
            (out_dir / subdir).mkdir(parents=True, exist_ok=True)

        settings.configure_logging(out_dir / 'logs')
        set_run_id(config.hash[:8])
        configure_opentelemetry()

        context = RunContext(name=name, config=config, out_dir=out_dir)
        inputs = config.input_paths()
        if self.load_scene:
            context.scene = load_scene(config.dataset, inputs['cube'], inputs['labels'], inputs.get('split'))
        write_manifest(out_dir, name, config.data, config.hash, config.seed, config.threads, inputs=inputs)
        logger.info("Run %s (config %s, seed %d) writing to %s", name, config.hash[:8], config.seed, out_dir)
        return context
