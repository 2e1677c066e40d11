"""Exception hierarchy.

Every error raised on purpose by the library derives from ``RapidmixError``.
The CLI maps the subclasses onto process exit codes.
"""


class RapidmixError(Exception):
    """Base class for library errors."""


class ConfigError(RapidmixError, ValueError):
    """Invalid configuration or model parameters (exit code 2)."""


class ResourceError(RapidmixError):
    """Request exceeds a dense-size or enumeration cap (exit code 3)."""


class DomainError(RapidmixError, ValueError):
    """Input outside the domain of a matrix function (singular state, log of zero)."""


class GeometryError(RapidmixError, ValueError):
    """Regions violate a geometric precondition (shielding, boundary placement)."""


class NotColorableError(GeometryError):
    """Graph has an odd cycle."""


class ScheduleInfeasibleError(GeometryError):
    """Target region too small for a covering schedule."""

    def __init__(self, message: str, minimal_L: int):
        super().__init__(message)
        self.minimal_L = minimal_L


class UnsupportedModelError(RapidmixError):
    """Construction requires a commuting nearest-neighbour potential."""


class ConditioningError(RapidmixError):
    """Kernel of a generator is not separated from the rest of the spectrum."""


class EstimationError(RapidmixError):
    """Variational search produced no valid sample."""


class IntegrationError(RapidmixError):
    """Time integrator failed to meet its tolerances."""

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


class HorizonError(RapidmixError):
    """Trajectory did not reach the requested distance within the horizon."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved
