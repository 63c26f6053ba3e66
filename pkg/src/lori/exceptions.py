"""Exception hierarchy.

Validation problems (bad input files, inconsistent shapes, invalid options)
derive from :class:`ValidationError`; failures of the numerics derive from
:class:`NumericalError`. The command-line entry point maps the first family
to exit code 1 and the second to exit code 2.
"""


class LoriError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LoriError, ValueError):
    """Invalid input data, shapes or options."""


class NumericalError(LoriError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class NumericRangeError(NumericalError):
    """A natural parameter exceeded the configured exponential cap."""


class DegenerateOffsetError(NumericalError):
    """All observed counts are zero, so the offset has no finite optimum."""


class RankDeficiencyError(NumericalError):
    """The covariate design is singular on the observed cells."""


class ConvergenceError(NumericalError):
    """An inner solver did not reach its tolerance."""
