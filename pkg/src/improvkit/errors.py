"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ImprovkitError(Exception):
    """Base class for all package errors."""


class ConfigError(ImprovkitError):
    """Invalid configuration: bad field values, unknown tags, missing keys."""


class DataError(ImprovkitError):
    """Ingestion or dataset problems: unparseable files, shape mismatches."""


class EvaluationError(DataError):
    """A metric's conditioning event is empty on the given data."""


class NumericalError(ImprovkitError):
    """Non-finite values or failed convergence during optimization."""
