"""Exception types shared across the solver stack."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """A run or mesh parameter is inconsistent or degenerate."""


class NonConvergenceError(RuntimeError):
    """The inner fixed-point iteration did not converge.

    Downstream drivers treat this as the operational signature of blow-up:
    the implicit system has no nearby solution at the current step size.
    """

    def __init__(self, iterations: int, residual: float, t: float):
        self.iterations = iterations
        self.residual = residual
        self.t = t
        super().__init__(
            f"fixed-point iteration did not converge after {iterations} "
            f"iterations (residual {residual:.3e} at t={t:.6g})"
        )


class NumericalBreakdownError(RuntimeError):
    """A linear solve hit a zero pivot or produced non-finite values."""


class FitRefusedError(ValueError):
    """A regression was requested on data that cannot support it."""
