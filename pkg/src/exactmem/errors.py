"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`ExactMemError`,
so callers (the CLI in particular) can separate numerical failures from bugs.
"""


class ExactMemError(Exception):
    """Base class for all package errors."""


# -- validation ---------------------------------------------------------------

class ValidationError(ExactMemError, ValueError):
    pass


class InvalidFactorSet(ValidationError):
    pass


class NotHermitian(ValidationError):
    pass


class InvalidState(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class TruncationTooSmall(ValidationError):
    pass


class ParseError(ValidationError):
    """Malformed scenario config. ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


# -- numerics -----------------------------------------------------------------

class NumericalError(ExactMemError, ArithmeticError):
    pass


class StepTooLarge(NumericalError):
    pass


class StateInvariantViolated(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(f"step {step}: {message}" if step is not None else message)


class SingularImplicitStep(NumericalError):
    pass


class TruncationNotConverged(NumericalError):
    pass


class ChainTooLarge(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class SeriesDivergence(NumericalError):
    pass


class NonConvergent(NumericalError):
    pass
