"""Exception types shared across the package."""


class OrbitLinkError(Exception):
    """Base class for all package errors."""


class DomainError(OrbitLinkError, ValueError):
    """Input outside the valid domain of an operation."""


class PropagationError(OrbitLinkError):
    """Numerical propagation failed; carries the last good state."""

    def __init__(self, message, last_state=None, last_time=None, segment=None):
        super().__init__(message)
        self.last_state = last_state
        self.last_time = last_time
        self.segment = segment


class SolverError(OrbitLinkError):
    """The conic solver returned a non-optimal status where one was required."""

    def __init__(self, message, status=None, iteration=None):
        super().__init__(message)
        self.status = status
        self.iteration = iteration
