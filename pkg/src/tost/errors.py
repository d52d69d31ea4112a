"""Exception types shared across the package."""


class TostError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TostError, ValueError):
    pass


class ValidationError(TostError, ValueError):
    pass


class NumericalError(TostError, ArithmeticError):
    pass


class PreconditionError(TostError, ValueError):
    pass


class DegenerateGroupError(TostError, ValueError):
    """A group (head) has zero total membership mass."""


class SpecError(TostError, ValueError):
    """Invalid experiment or benchmark configuration."""
