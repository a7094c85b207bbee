"""Exception types shared across the package."""


class SplitkitError(Exception):
    """Base class for all errors raised by splitkit."""


class DimensionMismatchError(SplitkitError, ValueError):
    """Input arrays have incompatible or degenerate shapes."""


class ParameterError(SplitkitError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ConfigurationError(SplitkitError, ValueError):
    """A solver or experiment configuration violates a required inequality."""


class NumericalError(SplitkitError, ArithmeticError):
    """A non-finite value appeared during iteration.

    ``stage`` names the update in which the failure was detected, so that
    chained resolvent evaluations remain debuggable.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class FormatError(SplitkitError, ValueError):
    """An image file does not conform to the supported Netpbm subset.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
