"""Exception types shared across blendkit."""


class BlendkitError(Exception):
    """Base class for all blendkit errors."""


class ValidationError(BlendkitError, ValueError):
    """Input failed a shape, value, or consistency check."""


class NumericalError(BlendkitError, ArithmeticError):
    """A computation could not produce a finite result.

    ``index`` holds the offending datapoint when one can be named.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
