"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class DsrError(Exception):
    exit_code = 1


class ConfigError(DsrError, ValueError):
    exit_code = 2


class DataError(DsrError, ValueError):
    exit_code = 3


class NumericError(DsrError, ArithmeticError):
    """Raised on NaN/Inf or divergent losses.

    ``last_checkpoint`` points at the most recent good checkpoint, if any.
    """

    exit_code = 4

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class DimensionError(DsrError, ValueError):
    exit_code = 3


class DomainError(NumericError):
    """Argument outside an elementwise function's domain (log of <= 0, exp overflow)."""


class ContractError(DsrError, RuntimeError):
    exit_code = 1


class LoadError(DataError):
    """Checkpoint cannot be loaded, or its shapes disagree with the model."""
