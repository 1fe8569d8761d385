"""Exception types shared across the package."""


class EqpideError(Exception):
    """Base class for all package errors."""


class DomainError(EqpideError, ValueError):
    """Query outside the time or state domain of a tabulated object."""


class ValidationError(EqpideError, ValueError):
    """Market parameters violate a standing assumption."""


class SingularityError(EqpideError, ArithmeticError):
    """A strategy denominator degenerated during integration.

    Carries the time at which it happened in the ``where`` attribute.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class SolverError(EqpideError, RuntimeError):
    """A linear solve or time step failed; ``time_index`` locates it."""

    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class InstabilityError(SolverError):
    """Blow-up detector tripped during time stepping."""


class ConvexityError(EqpideError, RuntimeError):
    """The quadratic-in-u coefficient of the H-function is not positive."""


class SimulationError(EqpideError, RuntimeError):
    """A Monte Carlo path went non-finite; ``path_index`` locates it."""

    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class NonConvergenceError(EqpideError, RuntimeError):
    """Policy iteration failed to converge; carries the distance trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ConfigError(EqpideError, ValueError):
    """Bad run configuration (missing key, wrong type, unparsable file)."""
