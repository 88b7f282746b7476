#!/usr/bin/env python
"""Command-line utility for pre-training, fine-tuning and evaluation runs."""
import sys


def main():
    """Run a management command."""
    try:
        from core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import the factoformer packages. Are the requirements "
            "installed and is the repository root on your PYTHONPATH?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
