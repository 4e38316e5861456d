"""Exception hierarchy.

Data/usage problems derive from ``DataError`` (a ``ValueError``); numerical
failures derive from ``NumericalError``. The CLI maps the former to exit
code 1 and the latter to exit code 2.
"""


class NSCError(Exception):
    """Base class for all package errors."""


class DataError(NSCError, ValueError):
    """Malformed input: bad CSV, wrong dimensions, invalid pattern bits."""


class SupportError(DataError):
    """A missingness pattern needed for identification has no records."""


class NumericalError(NSCError):
    """A numerical procedure failed."""


class ConvergenceError(NumericalError):
    """A root finder did not reach its tolerance."""


class SeparationError(ConvergenceError):
    """Logistic fit diverged (quasi-complete separation)."""


class PositivityError(NumericalError):
    """Complete-case probabilities are zero or all weights were clipped."""


class BootstrapError(NumericalError):
    """Too many bootstrap or Monte Carlo replicates failed."""
