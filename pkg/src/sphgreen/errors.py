"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Grid, bandwidth or config values that cannot work together."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ShapeError(ValueError):
    """Array or channel shapes that do not line up."""


class DegenerateError(ValueError):
    """A normalizing quantity is zero (e.g. an all-zero target channel)."""


class TapeError(RuntimeError):
    """Backward pass called with a tape that does not match the forward pass."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values.

    ``last_good`` holds a copy of the parameters from the last finite step
    (or ``None`` if the very first step failed).
    """

    def __init__(self, message, last_good=None, diagnostics=None):
        super().__init__(message)
        self.last_good = last_good
        self.diagnostics = diagnostics or {}
