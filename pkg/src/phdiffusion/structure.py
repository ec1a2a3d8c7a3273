"""Structural matrices of a port-Hamiltonian system.

A system is described by the triple (J, R, G): a skew-symmetric
interconnection J, a symmetric positive-semidefinite dissipation R, and a
noise/input coupling G. All matrices are constant (state-independent) and
dense; the shipped experiments use n <= 2 and nothing here is tuned beyond
n ~ 16.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, StructureValidationError, StructureViolation

SKEW_TOL = 1e-12
SYM_TOL = 1e-12
PSD_EIG_TOL = -1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StructureMatrices:
    """Validated (J, R, G) bundle. Immutable; safe to share across tasks.

    Attributes
    ----------
    j : (n, n) skew-symmetric interconnection matrix
    r : (n, n) symmetric PSD dissipation matrix
    g : (n, m) noise/input coupling matrix
    n, m : state and noise dimensions
    """

    j: np.ndarray
    r: np.ndarray
    g: np.ndarray
    n: int
    m: int

    def drift_matrix(self) -> np.ndarray:
        """J - R, the open-loop drift factor."""
        return self.j - self.r

    def gg_t(self) -> np.ndarray:
        """G Gᵀ, the noise covariance factor."""
        return self.g @ self.g.T

    def closed_loop_matrix(self) -> np.ndarray:
        """J - R - GGᵀ, the factor of the feedback-controlled dynamics."""
        return self.j - self.r - self.g @ self.g.T


@dataclass(frozen=True)
class EffectiveDissipation:
    """R + GGᵀ and its smallest eigenvalue.

    If ``min_eigenvalue > 0`` the closed-loop dynamics are strictly
    dissipative away from critical points of the energy, which is the
    precondition for asymptotic stability of the equilibrium set.
    """

    d: np.ndarray
    min_eigenvalue: float


def _coerce_square(a, name: str) -> tuple[np.ndarray, list[StructureViolation]]:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    violations = []
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        violations.append(
            StructureViolation("dimension_mismatch", 0.0, f"{name} must be square, got shape {a.shape}")
        )
    return a, violations


def validate_structure(j, r, g) -> StructureMatrices:
    """Validate (J, R, G) and return an immutable bundle.

    Accepts scalars / 1-D arrays for one-dimensional systems; a 1-D ``g``
    is interpreted as a single noise column of length n.

    Raises
    ------
    StructureValidationError
        Listing every violated invariant (skewness of J, symmetry and
        positive semidefiniteness of R, dimension consistency) with its
        measured residual.
    """
    j, violations = _coerce_square(j, "j")
    r, more = _coerce_square(r, "r")
    violations += more

    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = g.reshape(1, 1)
    elif g.ndim == 1:
        g = g.reshape(-1, 1)
    elif g.ndim != 2:
        violations.append(
            StructureViolation("dimension_mismatch", 0.0, f"g must be at most 2-D, got shape {g.shape}")
        )

    n = j.shape[0]
    if r.shape[0] == r.shape[1] and r.shape[0] != n:
        violations.append(
            StructureViolation("dimension_mismatch", 0.0, f"r has shape {r.shape}, expected ({n}, {n})")
        )
    if g.ndim == 2 and g.shape[0] != n:
        violations.append(
            StructureViolation("dimension_mismatch", 0.0, f"g has {g.shape[0]} rows, expected {n}")
        )

    if j.shape[0] == j.shape[1]:
        skew_residual = float(np.max(np.abs(j + j.T))) if j.size else 0.0
        if skew_residual > SKEW_TOL:
            violations.append(
                StructureViolation("not_skew", skew_residual, "j is not skew-symmetric")
            )
    if r.shape[0] == r.shape[1]:
        sym_residual = float(np.max(np.abs(r - r.T))) if r.size else 0.0
        if sym_residual > SYM_TOL:
            violations.append(
                StructureViolation("not_symmetric", sym_residual, "r is not symmetric")
            )
        else:
            eigs = np.linalg.eigvalsh(0.5 * (r + r.T))
            if eigs.size and eigs[0] < PSD_EIG_TOL:
                violations.append(
                    StructureViolation("not_psd", float(eigs[0]), "r has a negative eigenvalue")
                )

    if violations:
        raise StructureValidationError(violations)

    return StructureMatrices(j=_readonly(j), r=_readonly(r), g=_readonly(g), n=n, m=g.shape[1])


def effective_dissipation(s: StructureMatrices) -> EffectiveDissipation:
    """R + GGᵀ with its smallest eigenvalue (symmetric PSD by construction)."""
    d = s.r + s.g @ s.g.T
    lam_min = float(np.linalg.eigvalsh(0.5 * (d + d.T))[0])
    return EffectiveDissipation(d=_readonly(d), min_eigenvalue=lam_min)


def skew_power_check(s: StructureMatrices, v) -> float:
    """Quadratic form vᵀJv; vanishes (to roundoff) for skew-symmetric J."""
    v = np.asarray(v, dtype=float)
    if v.shape != (s.n,):
        raise DimensionMismatch(f"v has shape {v.shape}, expected ({s.n},)")
    return float(v @ (s.j @ v))
