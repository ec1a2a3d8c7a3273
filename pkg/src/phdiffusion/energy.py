"""Hamiltonian energy models and the score identity.

An energy model represents a scalar field H(x, t) whose negative gradient
is the score of the density it induces, p(x) ∝ exp(-H(x, t)). The
normalizer is never computed in general — the score is normalizer-free —
but the exact Gaussian log-density is provided for the quadratic case so
forward stationary statistics can be validated against a closed form.

Built-in models are autonomous (∂H/∂t = 0); the time argument is threaded
through every interface so time-dependent energies can be plugged in.

All evaluations accept either a single state of shape (n,) or a batch of
shape (..., n) and broadcast accordingly.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from .errors import DimensionMismatch, HessianUnavailable, NotPD
from .structure import StructureMatrices

# Near-optimal central-difference step: eps^(1/3) scaled per coordinate.
_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


class EnergyModel(ABC):
    """Behavioral interface for a Hamiltonian energy H(x, t).

    Implementations must be stateless after construction; evaluations are
    pure functions and safe for concurrent use.
    """

    @property
    @abstractmethod
    def dim(self) -> int:
        """State dimension n."""

    @property
    @abstractmethod
    def params(self) -> np.ndarray:
        """Flat vector of real parameters."""

    @abstractmethod
    def value(self, x, t: float):
        """H(x, t); shape (...,) for input (..., n)."""

    @abstractmethod
    def gradient(self, x, t: float):
        """∇ₓH(x, t); same shape as x."""

    @property
    def has_hessian(self) -> bool:
        return False

    def hessian(self, x, t: float):
        """∇²ₓH(x, t); shape (..., n, n). Optional capability."""
        raise HessianUnavailable(f"{type(self).__name__} provides no analytic Hessian")

    def time_derivative(self, x, t: float):
        """∂H/∂t; identically zero for autonomous models."""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0

    def _check_dim(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DimensionMismatch(f"state has shape {x.shape}, expected trailing dim {self.dim}")
        return x


class QuadraticEnergy(EnergyModel):
    """H(x) = ½ xᵀPx with P symmetric positive definite.

    Gradient Px, Hessian P, unique minimum H = 0 at x = 0. Induces the
    Gaussian density N(0, P⁻¹).
    """

    def __init__(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if p.shape[0] != p.shape[1]:
            raise DimensionMismatch(f"p must be square, got shape {p.shape}")
        if np.max(np.abs(p - p.T)) > 1e-12:
            raise NotPD("p must be symmetric")
        try:
            np.linalg.cholesky(p)
        except np.linalg.LinAlgError:
            raise NotPD("p must be positive definite") from None
        self._p = p
        self._p.flags.writeable = False

    @property
    def p(self) -> np.ndarray:
        return self._p

    @property
    def dim(self) -> int:
        return self._p.shape[0]

    @property
    def params(self) -> np.ndarray:
        return self._p.ravel()

    def value(self, x, t: float):
        x = self._check_dim(x)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self._p, x)

    def gradient(self, x, t: float):
        x = self._check_dim(x)
        return x @ self._p  # P symmetric, so xP == Px

    @property
    def has_hessian(self) -> bool:
        return True

    def hessian(self, x, t: float):
        x = self._check_dim(x)
        return np.broadcast_to(self._p, x.shape[:-1] + self._p.shape).copy()


class QuarticWellEnergy(EnergyModel):
    """Two-dimensional four-well energy H(x) = (x₁²-1)² + (x₂²-1)².

    Four global minima at (±1, ±1), each with H = 0 and ∇H = 0;
    gradient [4x₁(x₁²-1), 4x₂(x₂²-1)], Hessian diag(12xᵢ²-4). The
    gradient grows cubically, so well-posedness of the driven dynamics
    holds only on bounded regions; all shipped experiments stay at
    desk scale where the dissipative drift keeps states bounded.
    """

    @property
    def dim(self) -> int:
        return 2

    @property
    def params(self) -> np.ndarray:
        return np.empty(0)

    @property
    def minima(self) -> np.ndarray:
        return np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])

    def value(self, x, t: float):
        x = self._check_dim(x)
        return np.sum((x**2 - 1.0) ** 2, axis=-1)

    def gradient(self, x, t: float):
        x = self._check_dim(x)
        return 4.0 * x * (x**2 - 1.0)

    @property
    def has_hessian(self) -> bool:
        return True

    def hessian(self, x, t: float):
        x = self._check_dim(x)
        diag = 12.0 * x**2 - 4.0
        h = np.zeros(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = diag[..., 0]
        h[..., 1, 1] = diag[..., 1]
        return h


def score(model: EnergyModel, x, t: float):
    """Score of the induced density: exactly -∇ₓH(x, t), no scaling."""
    return -model.gradient(x, t)


def finite_diff_gradient(model: EnergyModel, x, t: float, h: float | None = None):
    """Central-difference approximation of ∇ₓH at a single state.

    Verification oracle only; never used by the samplers. With h=None the
    step is eps^(1/3)·(1+|xᵢ|) per coordinate.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("finite_diff_gradient expects a single state vector")
    steps = np.full(x.shape, h) if h is not None else _FD_STEP * (1.0 + np.abs(x))
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += steps[i]
        xm[i] -= steps[i]
        out[i] = (model.value(xp, t) - model.value(xm, t)) / (2.0 * steps[i])
    return out


def finite_diff_hessian(model: EnergyModel, x, t: float, h: float | None = None):
    """Central differences of the analytic gradient; symmetrized."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("finite_diff_hessian expects a single state vector")
    steps = np.full(x.shape, h) if h is not None else _FD_STEP * (1.0 + np.abs(x))
    n = x.size
    hess = np.empty((n, n))
    for i in range(n):
        xp, xm = x.copy(), x.copy()
        xp[i] += steps[i]
        xm[i] -= steps[i]
        hess[:, i] = (model.gradient(xp, t) - model.gradient(xm, t)) / (2.0 * steps[i])
    return 0.5 * (hess + hess.T)


def hessian_trace_term(model: EnergyModel, x, t: float, s: StructureMatrices, fd_fallback: bool = True):
    """½·Tr(GGᵀ·∇²H(x, t)), the Itô correction of the energy evolution.

    Uses the analytic Hessian when the model provides one, otherwise a
    finite-difference fallback (single states only) unless disabled.
    """
    if model.has_hessian:
        hess = model.hessian(x, t)
    elif fd_fallback:
        hess = finite_diff_hessian(model, x, t)
    else:
        raise HessianUnavailable("no analytic Hessian and finite-difference fallback disabled")
    ggt = s.g @ s.g.T
    out = 0.5 * np.einsum("ij,...ji->...", ggt, hess)
    return float(out) if out.ndim == 0 else out


def gaussian_log_density(p, x) -> float:
    """Exact normalized log-density of N(0, P⁻¹) at x.

    Returns -½xᵀPx - ½n·ln(2π) + ½·ln det(P). This is the closed-form
    normalization available only in the quadratic case; used to validate
    forward stationary statistics.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if p.shape[0] != p.shape[1] or x.shape != (p.shape[0],):
        raise DimensionMismatch(f"incompatible shapes p={p.shape}, x={x.shape}")
    if np.max(np.abs(p - p.T)) > 1e-12:
        raise NotPD("p must be symmetric")
    sign, logdet = np.linalg.slogdet(p)
    if sign <= 0 or np.any(np.linalg.eigvalsh(0.5 * (p + p.T)) <= 0):
        raise NotPD("p must be positive definite")
    n = p.shape[0]
    return float(-0.5 * x @ p @ x - 0.5 * n * np.log(2.0 * np.pi) + 0.5 * logdet)


# Built-in models are selected by name in experiment configurations.
_ENERGY_FACTORIES: dict[str, object] = {}


def register_energy(name: str):
    """Register an energy factory callable(params_dict) -> EnergyModel."""

    def _register(factory):
        if name in _ENERGY_FACTORIES:
            raise ValueError(f"energy model {name!r} already registered")
        _ENERGY_FACTORIES[name] = factory
        return factory

    return _register


def make_energy(name: str, params: dict) -> EnergyModel:
    """Instantiate a registered energy model by name."""
    try:
        factory = _ENERGY_FACTORIES[name]
    except KeyError:
        known = ", ".join(sorted(_ENERGY_FACTORIES))
        raise KeyError(f"unknown energy model {name!r}; known: {known}") from None
    return factory(params)


@register_energy("quadratic")
def _make_quadratic(params: dict) -> QuadraticEnergy:
    return QuadraticEnergy(params["p"])


@register_energy("quartic_well")
def _make_quartic(params: dict) -> QuarticWellEnergy:
    return QuarticWellEnergy()
