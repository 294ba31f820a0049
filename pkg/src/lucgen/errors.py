"""Exception hierarchy shared by every lucgen module.

The command-line front end maps these onto exit codes: configuration
problems exit 1, data problems exit 2 and numeric divergence exits 3.
"""


class LucgenError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(LucgenError):
    exit_code = 1


class DimensionError(LucgenError, ValueError):
    exit_code = 1


class DomainError(LucgenError, ValueError):
    exit_code = 1


class PreconditionError(LucgenError, ValueError):
    exit_code = 1


class DataError(LucgenError):
    exit_code = 2


class IngestionError(DataError):
    """Raised for a missing file or a header that does not match its schema."""


class UnsupportedRegionError(DataError, ValueError):
    pass


class AssemblyError(DataError, ValueError):
    pass


class NumericError(LucgenError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the last parameter set whose loss was finite so the
    caller can still persist it.
    """

    def __init__(self, message, checkpoint=None, iteration=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.iteration = iteration
