"""Exception types raised across the toolkit."""


class SphereSymmError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SphereSymmError, ValueError):
    """An argument lies outside the domain of a pointwise formula."""


class PreconditionError(SphereSymmError, ValueError):
    """Inputs violate an operation's stated precondition."""


class GridMismatchError(PreconditionError):
    """Two sets live on incompatible grids."""


class AmplitudeError(PreconditionError):
    """A perturbation amplitude exceeds the feasible range."""

    def __init__(self, message, max_amplitude):
        super().__init__(message)
        self.max_amplitude = max_amplitude


class CollarError(PreconditionError):
    """A collar is too thin to host the rebalancing cells."""


class ConvergenceError(SphereSymmError, RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
