"""Exception hierarchy shared by the library and the command line front end."""


class ModalRegError(Exception):
    """Base class for all errors raised by :mod:`modalreg`."""

    exit_code = 1


class ConfigError(ModalRegError, ValueError):
    exit_code = 2


class DataError(ModalRegError, ValueError):
    exit_code = 3


class NumericalError(ModalRegError, ArithmeticError):
    """A linear solve or iteration failed numerically.

    ``info`` carries diagnostics such as a condition-number estimate.
    """

    exit_code = 4

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = info


class StorageError(ModalRegError, OSError):
    exit_code = 5
