class ThermoPatError(Exception):
    """Base class for all errors raised by this package."""


class GridMismatchError(ThermoPatError, ValueError):
    pass


class NonFiniteError(ThermoPatError, ValueError):
    """A field contains NaN or Inf. ``index`` is the first offending node."""

    def __init__(self, message, index=None, step=None):
        super().__init__(message)
        self.index = index
        self.step = step


class ConvergenceError(ThermoPatError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CGBreakdown(ThermoPatError, RuntimeError):
    """Raised when the normal operator looks indefinite or the residual blows up."""


class ConfigError(ThermoPatError, ValueError):
    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
