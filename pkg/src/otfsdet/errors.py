"""Error taxonomy for the simulator.

Everything raised on purpose derives from OtfsError so callers can catch one
base class. InvalidArgumentError doubles as ValueError, NumericalError as
ArithmeticError, for callers that only know the stdlib hierarchy.
"""


class OtfsError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(OtfsError, ValueError):
    """A parameter is outside its documented domain."""


class DimensionMismatchError(InvalidArgumentError):
    """Array shapes disagree with the frame geometry."""


class NumericalError(OtfsError, ArithmeticError):
    """A numerical routine failed (factorization breakdown, non-finite values)."""


class ConfigError(OtfsError, ValueError):
    """A config file or override string could not be interpreted."""
