"""Exception types shared across the package.

The CLI maps :class:`DataError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""


class MprtError(Exception):
    """Base class for all package errors."""


class DataError(MprtError, ValueError):
    """Invalid input data, schema, or arguments."""


class NumericalError(MprtError, ArithmeticError):
    """A numerical routine failed (singular matrix, non-convergence, ...).

    ``best`` optionally carries the best iterate reached before failing.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
