"""Exception types raised by the numerical routines."""


class ConvergenceError(RuntimeError):
    """A quadrature or root-finding routine failed to reach its tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class SingularJacobianError(ConvergenceError):
    """Newton iteration hit a (numerically) singular Jacobian."""


class NoiseDominatedError(ValueError):
    """Observed score variance does not exceed the sampling-noise variance."""


class UnreachableTargetError(ValueError):
    """A sample-size target cannot be met within the search bounds."""
