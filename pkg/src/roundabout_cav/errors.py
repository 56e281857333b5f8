"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RoundaboutError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RoundaboutError, ValueError):
    pass


class DomainError(RoundaboutError, ValueError):
    """Evaluation requested outside a plan's time or station range."""


class ContractViolationError(RoundaboutError):
    """An input breaks a documented precondition the caller should guarantee."""


class InfeasibleEntryError(RoundaboutError, ValueError):
    """Entry speed lies outside [v_min, v_max]."""


class ProtocolError(RoundaboutError):
    """Arrivals presented to the coordinator out of order, or duplicated."""


class InfeasibleScheduleError(RoundaboutError):
    """No admissible exit horizon exists inside the feasible window.

    ``blocking`` holds the safety violations seen at the last candidate
    horizon examined, so callers can report which constraints bind.
    """

    def __init__(self, message: str, vehicle_id=None, blocking=()):
        super().__init__(message)
        self.vehicle_id = vehicle_id
        self.blocking = list(blocking)
