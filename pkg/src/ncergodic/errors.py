from __future__ import annotations

from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .dynamics import ConditionReport
    from .maxerg import LimitDiagnostics, MaximizerSolution


class NcErgodicError(Exception):
    """Base exception for the ncergodic package."""


class InvalidInputError(NcErgodicError, ValueError):
    """Raised when caller-supplied data violates a documented precondition."""


class NumericalBreakdownError(NcErgodicError, ArithmeticError):
    """Raised when a numerical procedure cannot produce a trustworthy result."""


class DimensionMismatchError(InvalidInputError):
    """Raised when block counts or block sizes disagree with the algebra."""


class InvalidExponentError(InvalidInputError):
    """Raised when an L^p exponent lies outside `[1, inf]`."""


class NotHermitianError(InvalidInputError):
    """Raised when a matrix meant to be self-adjoint has a large hermiticity defect."""


class DomainError(InvalidInputError):
    """Raised when a spectral function is undefined at an eigenvalue."""


class NotFaithfulError(InvalidInputError):
    """Raised when a density has a non-positive eigenvalue."""


class NotNormalizedError(InvalidInputError):
    """Raised when a state density does not have unit trace."""


class IllConditionedError(InvalidInputError):
    """Raised when a density is too badly conditioned to certify against."""


class NotStochasticError(InvalidInputError):
    """Raised when a Markov kernel has negative entries or rows not summing to one."""


class NotSubInvariantError(InvalidInputError):
    """Raised when a reference measure fails `mu P <= mu` entrywise."""


class NotSubalgebraError(InvalidInputError):
    """Raised when a subalgebra specification does not define a unital *-subalgebra."""


class NotTracialError(InvalidInputError):
    """Raised when a tracial-only operation receives a non-tracial reference."""


class InvalidScenarioError(InvalidInputError):
    """Raised when a scenario file cannot be parsed or is inconsistent."""


class ConditionsNotMetError(InvalidInputError):
    """Raised when a map fails one of the contraction/positivity/trace conditions.

    Attributes:
        report: Condition report with the failing verdicts.
    """

    def __init__(self, message: str, *, report: ConditionReport) -> None:
        """Create a conditions failure.

        Args:
            message: Human-readable description.
            report: Verdicts that triggered the failure.
        """
        super().__init__(message)
        self.report = report


class NonConvergenceError(NumericalBreakdownError):
    """Raised when the hermitian eigensolver fails to converge."""


class AmbiguousSpectralCutError(NumericalBreakdownError):
    """Raised in strict mode when an eigenvalue sits inside a cut's ambiguity band.

    Attributes:
        cut: Cut point that was approached.
        eigenvalue: Offending eigenvalue.
    """

    def __init__(self, message: str, *, cut: float, eigenvalue: float) -> None:
        super().__init__(message)
        self.cut = cut
        self.eigenvalue = eigenvalue


class NoStableLimitError(NumericalBreakdownError):
    """Raised when no cluster of projections stabilises within the horizon.

    Attributes:
        diagnostics: Limit diagnostics gathered before giving up.
    """

    def __init__(self, message: str, *, diagnostics: LimitDiagnostics) -> None:
        """Create a missing-limit error.

        Args:
            message: Human-readable description.
            diagnostics: Sequence distances and cluster data for inspection.
        """
        super().__init__(message)
        self.diagnostics = diagnostics


class SolverStalledError(NumericalBreakdownError):
    """Raised in strict mode when the maximiser exhausts its sweeps with a large gap.

    Attributes:
        solution: Best solution reached, flagged as stalled.
    """

    def __init__(self, message: str, *, solution: MaximizerSolution) -> None:
        super().__init__(message)
        self.solution = solution


class GenerationFailureError(NumericalBreakdownError):
    """Raised when a random certified instance cannot be produced.

    Attributes:
        seed: Seed that failed.
        attempts: Number of rescaling attempts made.
    """

    def __init__(self, message: str, *, seed: Any, attempts: int) -> None:
        super().__init__(message)
        self.seed = seed
        self.attempts = attempts
