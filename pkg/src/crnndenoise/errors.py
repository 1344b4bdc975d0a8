"""Exception types shared across the package.

The CLI maps these onto its exit codes: configuration problems exit with 2,
I/O problems bubble up as OSError and exit with 3, numeric aborts exit with
4, and checkpoint mismatches exit with 5.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class DimensionError(ValueError):
    """Tensor or signal shapes are inconsistent with an operation's contract."""


class NumericsError(ArithmeticError):
    """A computation produced a non-finite value where finite values are required."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, corrupt, or of an unknown version."""


class CheckpointMismatchError(CheckpointError):
    """A checkpoint does not match the model configuration it is loaded into."""
