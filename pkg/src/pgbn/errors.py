"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A layer, schedule or run was configured with values that cannot work."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class FormatError(ValueError):
    """A PGBN roll or checkpoint stream is malformed or truncated."""


class NumericAbort(RuntimeError):
    """Training produced a NaN or Inf."""

    def __init__(self, message, *, phase=None, iteration=None, term=None):
        super().__init__(message)
        self.phase = phase
        self.iteration = iteration
        self.term = term
