"""
Command-line entry point. Every module in ``core/management/commands``
defining a ``Command`` class is a subcommand named after the module.
"""

import importlib
import pkgutil
import sys
from pathlib import Path

import click

from factoformer_project import __version__


def find_commands(management_dir):
    command_dir = Path(management_dir) / 'commands'
    return sorted(
        name for _, name, is_pkg in pkgutil.iter_modules([str(command_dir)])
        if not is_pkg and not name.startswith('_')
    )


def load_command_class(name):
    module = importlib.import_module(f'core.management.commands.{name}')
    return module.Command


class ManagementGroup(click.Group):
    def list_commands(self, ctx):
        return find_commands(Path(__file__).parent)

    def get_command(self, ctx, cmd_name):
        name = cmd_name.replace('-', '_')
        if name not in self.list_commands(ctx):
            return None
        return load_command_class(name).as_click_command(name)


@click.group(cls=ManagementGroup)
@click.version_option(__version__, prog_name='factoformer')
def cli():
    """Factorized spectral-spatial transformers for hyperspectral image classification."""


def execute_from_command_line(argv=None):
    argv = argv if argv is not None else sys.argv
    cli.main(args=argv[1:], prog_name=Path(argv[0]).name)
