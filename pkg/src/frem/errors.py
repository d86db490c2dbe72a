"""Exception types shared across the package.

The hierarchy splits into configuration problems (bad user input, caught
before any numerics run) and numerical-degeneracy problems (a computation
started and hit a state it cannot continue from).  The CLI maps the former
to exit code 2 and the latter to exit code 3.
"""

from __future__ import annotations


class FremError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FremError):
    """Invalid configuration input (file, schema, or value)."""


class ParameterDomainError(FremError):
    """A parameter vector lies outside the model's admissible set."""


class EstimatorFailureError(FremError):
    """A log-density or estimate came back non-finite.

    Carries the index of the offending transition when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class UnsupportedModelError(FremError):
    """The requested construction is not available for this model."""


class WeightSingularityError(FremError):
    """A reverse-chain weight factor evaluated to a non-finite value."""

    def __init__(self, message: str, step: int | None = None,
                 state=None, next_state=None):
        super().__init__(message)
        self.step = step
        self.state = state
        self.next_state = next_state


class DegenerateBridgeError(FremError):
    """A bridge estimate collapsed (no kernel-active pairs / zero mass)."""

    def __init__(self, message: str, gap: tuple[int, int] | None = None):
        super().__init__(message)
        self.gap = gap


class MStepFailureError(FremError):
    """The maximization step failed (degenerate stats or no convergence)."""


class NonIntegrableStatisticError(FremError):
    """Requested statistics are not integrable for these model parameters."""


#: Errors the CLI reports as numerical degeneracy (exit code 3).
DEGENERACY_ERRORS = (
    ParameterDomainError,
    EstimatorFailureError,
    UnsupportedModelError,
    WeightSingularityError,
    DegenerateBridgeError,
    MStepFailureError,
    NonIntegrableStatisticError,
)
