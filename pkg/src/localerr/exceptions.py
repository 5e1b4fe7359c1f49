"""Exception hierarchy shared by every module."""


class LocalErrError(Exception):
    """Base class for all package errors."""


class ShapeError(LocalErrError, ValueError):
    pass


class DomainError(LocalErrError, ValueError):
    pass


class InsufficientSamplesError(LocalErrError, ValueError):
    pass


class DegenerateError(LocalErrError, ValueError):
    """A fit or statistic is undefined for the given input (zero variance, etc)."""


class ConvergenceError(LocalErrError, ArithmeticError):
    pass


class DivergenceError(LocalErrError, ArithmeticError):
    """Training produced a non-finite or exploding quantity."""

    def __init__(self, message, layer=None, batch=None, replicate=None):
        super().__init__(message)
        self.layer = layer
        self.batch = batch
        self.replicate = replicate


class IdxFormatError(LocalErrError, ValueError):
    pass


class ConsistencyError(LocalErrError, ValueError):
    pass


class DatasetNotFoundError(LocalErrError, FileNotFoundError):
    pass


class UsageError(LocalErrError, ValueError):
    pass
