"""Exception hierarchy shared across the package.

Each error class carries the process exit code the CLI maps it to:
0 success, 2 configuration, 3 data, 4 numeric/training.
"""


class CmtfError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CmtfError):
    """Invalid configuration value or unsatisfiable option combination."""

    exit_code = 2


class DataError(CmtfError):
    """Malformed, missing, or unrecoverable input data."""

    exit_code = 3


class PipelineError(DataError):
    """A stage ran before its upstream outputs existed."""


class WindowError(DataError):
    """Not enough rows for a requested estimation or lookback window."""


class NumericError(CmtfError):
    """Non-finite values, failed solves, or other numeric breakdowns."""

    exit_code = 4


class DimensionError(NumericError):
    """Array shapes incompatible with the requested operation."""


class TrainingError(NumericError):
    """Training diverged or otherwise failed mid-run."""


class ContractError(CmtfError):
    """API misuse: a documented precondition was violated by the caller."""
