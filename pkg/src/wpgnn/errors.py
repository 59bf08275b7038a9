"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, invalid hyperparameters or bad config keys."""


class DomainError(ValueError):
    """An input outside the domain of a function (e.g. NaN or Inf)."""


class SimulationDivergence(ArithmeticError):
    """A simulated trajectory produced a non-finite value.

    Attributes
    ----------
    step : int
        Zero-based time index at which the first non-finite value appeared.
    """

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"simulation diverged at step {self.step}")


class DataFormatError(ValueError):
    """A data or model file that cannot be parsed.

    Attributes
    ----------
    path : str
        File being read.
    line : int or None
        One-based line number of the offending record, when known.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
