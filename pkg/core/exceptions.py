"""
Exception hierarchy shared by every package.

Each class carries the process exit code the CLI reports for it.
"""


class FactoFormerError(Exception):
    exit_code = 1


class ConfigError(FactoFormerError, ValueError):
    """Invalid configuration or hyperparameter."""
    exit_code = 2


class DataFormatError(FactoFormerError):
    """Cube, label or split file that does not match its declared format."""
    exit_code = 2


class ShapeMismatchError(FactoFormerError, ValueError):
    exit_code = 2


class LabelError(FactoFormerError, ValueError):
    exit_code = 2


class CheckpointError(FactoFormerError):
    """Missing checkpoint, corrupt payload, or config that does not match."""
    exit_code = 2


class NumericalError(FactoFormerError, ArithmeticError):
    """Non-finite values where finite ones are required."""
    exit_code = 3


class BackwardWithoutForwardError(FactoFormerError, RuntimeError):
    exit_code = 3
