"""Exception hierarchy."""


class HalfCarError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(HalfCarError, ValueError):
    """Non-finite or otherwise malformed numerical input."""


class ModelValidityError(HalfCarError):
    """State outside the region where the pitch dynamics are defined."""


class NoEquilibriumError(HalfCarError):
    """The static balance equations have no admissible solution."""


class InvalidConfigError(HalfCarError, ValueError):
    pass


class InsufficientDataError(HalfCarError, ValueError):
    pass


class RoadWindowError(HalfCarError):
    """Road signal evaluated outside its validity window."""


class InvalidProblemError(HalfCarError):
    """Objective or gradient returned a non-finite value."""


class NonConvergenceError(HalfCarError):
    """Solver gave up; ``point`` holds the best iterate found."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class SensitivityUnavailableError(HalfCarError):
    pass


class UpdateRefusedError(HalfCarError):
    """Sensitivity update requested from a non-regular bundle."""


class SchedulingError(HalfCarError):
    """Advanced-step pipeline asked for controls it does not have."""
