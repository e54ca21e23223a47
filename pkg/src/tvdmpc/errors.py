"""Exception hierarchy shared by every module."""


class TvdMpcError(Exception):
    """Base class for all package errors."""


class DimensionError(TvdMpcError, ValueError):
    pass


class DomainError(TvdMpcError, ValueError):
    pass


class CapacityError(TvdMpcError, RuntimeError):
    pass


class SolverError(TvdMpcError, RuntimeError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ScheduleError(TvdMpcError, ValueError):
    """Raised when some step's tightening exhausts the violation budget."""

    def __init__(self, message, k=None, zeta=None):
        super().__init__(message)
        self.k = k
        self.zeta = zeta


class ConfigError(TvdMpcError, ValueError):
    pass


class ReportError(TvdMpcError, ValueError):
    pass


class RiskWarning(UserWarning):
    """Emitted when a risk measure falls back to a limiting convention."""
