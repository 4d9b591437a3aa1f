"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/configuration problems exit 1,
validation failures exit 2, and numerical failures (step size, domain exit,
singularity) exit 3.
"""


class CQSimError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CQSimError, ValueError):
    """Shapes of model fields or operands are inconsistent."""


class HermiticityError(CQSimError, ValueError):
    """A matrix required to be Hermitian (or symmetric) is not."""


class PositivityError(CQSimError, ValueError):
    """A matrix required to be positive semi-definite is not, or a
    complete-positivity condition is violated."""


class ContractError(CQSimError, ValueError):
    """An operation was called outside its contract (e.g. the pure-state
    unravelling on a model that does not saturate the trade-off)."""


class StepSizeError(CQSimError, RuntimeError):
    """A time step is too large for the requested integration: trace or
    weight underflow in a stepper, or a grid-solver stability bound."""

    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DomainExitError(CQSimError, RuntimeError):
    """A trajectory left the model's phase-space domain (e.g. q <= 0 in the
    square-root well, or the exclusion ball around a point mass)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class UsageError(CQSimError, ValueError):
    """Malformed configuration or incompatible arguments."""
