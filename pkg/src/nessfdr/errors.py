"""Exception types shared across the package."""


class StabilityViolation(ValueError):
    """Coupled frequency matrix is not positive definite; no bound motion."""


class SingularMatrix(ArithmeticError):
    """Dressed kernel is exactly singular at the requested frequency."""

    def __init__(self, kappa, detail=""):
        self.kappa = kappa
        msg = f"dressed kernel singular at kappa={kappa!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnsupportedDimension(ValueError):
    """Operation only defined for a specific chain length."""


class UnsupportedMode(ValueError):
    """Requested kernel / evolution mode is outside what this build supports."""


class NonConvergence(RuntimeError):
    """Adaptive integration exhausted its budget.

    Carries the best estimate so callers can decide whether to use it.
    """

    def __init__(self, message, value=None, error=None, grid=None):
        super().__init__(message)
        self.value = value
        self.error = error
        self.grid = grid


# transport-facing alias
QuadratureNonConvergence = NonConvergence


class ConsistencyFailure(RuntimeError):
    """Independent evaluations of the same quantity disagree beyond tolerance."""


class StepTooCoarse(RuntimeError):
    """Time step too large for the energy-bookkeeping invariant to hold."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""
