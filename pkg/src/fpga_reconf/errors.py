"""Exception types shared across the package."""


class OffloadError(Exception):
    """Base class for failures raised by this package."""


class ProfileError(OffloadError):
    """A code profile file or iteration-count file is unusable."""


class AnalyticsError(OffloadError):
    """A log window cannot produce the requested analytics output."""


class CompileError(OffloadError):
    """The backend could not produce a circuit for a pattern."""


class MeasurementError(OffloadError):
    """The backend could not measure a pattern against a datum."""


class SearchError(OffloadError):
    """Pattern search could not produce any measurable candidate."""


class CycleError(OffloadError):
    """A reconfiguration cycle aborted; `step` names where."""

    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step
