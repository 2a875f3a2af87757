"""Exception hierarchy shared by all dvamp modules."""


class DvampError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DvampError, ValueError):
    pass


class TraceParseError(DvampError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TraceDataError(DvampError, ValueError):
    pass


class InfeasibleActionError(DvampError):
    """An action was applied that violates NUMA capacity (schedulers must mask)."""


class AccountingError(DvampError):
    """Incremental utilization drifted from the set of active placements."""


class UnschedulableError(DvampError):
    """A request can never fit, even on an empty machine."""


class ShapeError(DvampError, ValueError):
    pass


class NumericError(DvampError, FloatingPointError):
    pass


class OracleLimitError(DvampError):
    pass
