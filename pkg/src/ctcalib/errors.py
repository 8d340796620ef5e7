"""Exception hierarchy shared by the calibration pipeline.

Every error carries an optional ``stage`` so the CLI can report where the
pipeline stopped. Exit codes used by the CLI are attached to the classes.
"""

from __future__ import annotations


class CalibError(Exception):
    exit_code = 1

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "CalibError":
        if self.stage is None:
            self.stage = stage
        return self


class ConfigError(CalibError, ValueError):
    exit_code = 2


class DataError(CalibError, ValueError):
    """Missing, malformed or invariant-violating input data."""

    exit_code = 3


class InsufficientDataError(DataError):
    exit_code = 3


class DomainError(CalibError, ValueError):
    """Query time outside a spline's valid evaluation interval."""

    exit_code = 3

    def __init__(self, tau, interval: tuple[float, float], stage: str | None = None):
        lo, hi = interval
        super().__init__(f"time {tau!r} outside spline domain [{lo!r}, {hi!r})", stage)
        self.interval = interval


class CheiralityError(CalibError, ValueError):
    exit_code = 3


class DegeneracyError(CalibError, ValueError):
    exit_code = 4


class ObservabilityError(CalibError):
    exit_code = 4


class ExcitationError(ObservabilityError):
    """Motion is not rich enough for translation/gravity to be observable."""

    exit_code = 4


class DivergenceError(CalibError):
    exit_code = 5
