"""Exception hierarchy shared by all modules."""


class PmToolError(Exception):
    """Base class for every error raised by pmtool."""


class DomainError(PmToolError, ValueError):
    """An argument lies outside the domain of the operation."""


class AdmissibilityError(PmToolError, ValueError):
    """A map parameter exceeds the cap of its admissible sequence."""


class SequenceExhausted(PmToolError, IndexError):
    """A finite admissible sequence was asked for more maps than it holds."""


class NumericalFailure(PmToolError, RuntimeError):
    """A numerical invariant could not be established.

    ``invariant`` names the property that failed; the CLI prints it on
    standard error and exits with status 3.
    """

    invariant = "numerical"

    def __init__(self, message, invariant=None):
        super().__init__(message)
        if invariant is not None:
            self.invariant = invariant


class ConvergenceError(NumericalFailure):
    invariant = "convergence"

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ResolutionExhausted(NumericalFailure):
    invariant = "partition-resolution"


class ConeMembershipError(NumericalFailure, ValueError):
    invariant = "cone-membership"


class InsufficientData(NumericalFailure):
    """Too few usable points for a rate fit; ``reasons`` lists the drops."""

    invariant = "rate-fit"

    def __init__(self, message, reasons=()):
        super().__init__(message)
        self.reasons = list(reasons)


class DivergentSeries(NumericalFailure, ValueError):
    invariant = "summability"


class ValidationError(PmToolError, ValueError):
    """Configuration failed validation; ``violations`` enumerates every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")
