"""Exception hierarchy shared across the package.

Each error carries the CLI exit code it maps to: 1 for configuration
problems, 2 for data problems, 3 for training divergence.
"""


class ForecastError(Exception):
    exit_code = 1


class ConfigError(ForecastError):
    exit_code = 1


class ContractError(ForecastError, ValueError):
    """A caller violated an operation's precondition."""

    exit_code = 1


class ShapeError(ContractError):
    pass


class DataError(ForecastError):
    exit_code = 2


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EmptyDataError(DataError):
    pass


class SplitError(DataError):
    pass


class DivergenceError(ForecastError):
    exit_code = 3

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} (loss={loss!r})"
        )
