"""Exception types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


class PHDiffusionError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(PHDiffusionError):
    """Inputs have inconsistent dimensions."""


@dataclass(frozen=True)
class StructureViolation:
    """One violated structural invariant with its measured residual."""

    kind: str  # "not_skew" | "not_symmetric" | "not_psd" | "dimension_mismatch"
    residual: float
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail} (residual={self.residual:.3e})"


class StructureValidationError(PHDiffusionError):
    """Raised by validate_structure; lists every violated invariant."""

    def __init__(self, violations: list[StructureViolation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class NotPD(PHDiffusionError):
    """Matrix expected to be symmetric positive definite is not."""


class HessianUnavailable(PHDiffusionError):
    """Energy model provides no Hessian and the fallback is disabled."""


class NonFiniteState(PHDiffusionError):
    """A state became NaN/Inf during integration (step-size blow-up)."""

    def __init__(self, message: str, trajectory: int | None = None, step: int | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class StepFailure(PHDiffusionError):
    """Adaptive step-size controller failed to meet tolerances."""


class EmptyEnsemble(PHDiffusionError):
    """Statistics requested on an ensemble with no trajectories."""


class InsufficientEnsemble(PHDiffusionError):
    """Too few trajectories for Monte Carlo estimates to be meaningful."""


class AmbiguousMinima(PHDiffusionError):
    """Configured minima are too close together for the classification tolerance."""


class ConfigError(PHDiffusionError):
    """Invalid experiment configuration; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
