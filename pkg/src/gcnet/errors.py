"""Exception hierarchy shared by every stage of the pipeline."""


class GcnetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(GcnetError, ValueError):
    pass


class ParseError(GcnetError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class WindowingError(GcnetError):
    """Not enough history for the requested window or lookback."""


class ContractError(GcnetError, ValueError):
    """A caller violated a precondition (shape, node id, empty input...)."""


class DegenerateTrainingError(GcnetError):
    """Training data cannot support the model (single class, singular covariance)."""


class LabelUnavailableError(GcnetError):
    pass


class RunFailure(GcnetError):
    """The backtest skipped too many days to be trusted."""
