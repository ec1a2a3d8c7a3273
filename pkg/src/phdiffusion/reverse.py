"""Reverse-time generative dynamics.

The primary sampler is the deterministic closed-loop ODE
ẋ = (J - R - GGᵀ)∇H, i.e. the open-loop drift plus the output-feedback
law u = -Gᵀ∇H acting through G. A stochastic reverse sampler (the
score-driven SDE sharing the same drift plus G dW noise) is provided for
empirical comparison only, reusing the forward stepping machinery.

The sampler integrates on its own forward clock τ ∈ [0, T]; no time
reversal of the energy is applied because all shipped energies are
autonomous. A time-dependent energy would be evaluated at t = T - τ.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .energy import EnergyModel, score
from .errors import AmbiguousMinima, DimensionMismatch, NonFiniteState, StepFailure
from .forward import Ensemble, TimeGrid, Trajectory, _simulate_em
from .structure import StructureMatrices


class PerturbationModel(ABC):
    """Bounded gradient perturbation Δ(x, t), modeling score error."""

    @property
    @abstractmethod
    def bound(self) -> float:
        """Declared sup-norm bound on ‖Δ(x, t)‖."""

    @abstractmethod
    def delta(self, x, t: float) -> np.ndarray:
        """Perturbation vector at (x, t)."""


class ConstantPerturbation(PerturbationModel):
    """Δ(x, t) ≡ value."""

    def __init__(self, value):
        self._value = np.atleast_1d(np.asarray(value, dtype=float))
        self._bound = float(np.linalg.norm(self._value))

    @property
    def bound(self) -> float:
        return self._bound

    def delta(self, x, t: float) -> np.ndarray:
        return self._value


@dataclass(frozen=True)
class IntegratorConfig:
    """ODE integrator selection.

    method "fixed_rk4" uses classic fourth-order Runge-Kutta with step
    ``dt``; "adaptive_rk45" uses the embedded Dormand-Prince 4(5) pair
    with PI step control (rel_tol/abs_tol/max_step), evaluated at
    ``n_eval`` equispaced output times.
    """

    method: str = "adaptive_rk45"
    dt: float | None = None
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    max_step: float = np.inf
    n_eval: int = 200

    def __post_init__(self):
        if self.method not in ("fixed_rk4", "adaptive_rk45"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        if self.method == "fixed_rk4" and (self.dt is None or self.dt <= 0):
            raise ValueError("fixed_rk4 requires a positive dt")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_eval < 2:
            raise ValueError("n_eval must be at least 2")


def feedback_control(model: EnergyModel, s: StructureMatrices, x, t: float) -> np.ndarray:
    """Output-feedback law u = -Gᵀ∇H(x, t); an m-vector."""
    return -(model.gradient(x, t) @ s.g)


def ph_vector_field(model: EnergyModel, s: StructureMatrices, x, t: float) -> np.ndarray:
    """Closed-loop field (J - R - GGᵀ)∇H(x, t).

    Algebraically identical to the open-loop drift (J-R)∇H plus
    G·feedback_control; the two compositions agree to roundoff.
    """
    return model.gradient(x, t) @ s.closed_loop_matrix().T


def reverse_sde_drift(model: EnergyModel, s: StructureMatrices, x, t: float, score_fn) -> np.ndarray:
    """Drift of the score-driven reverse SDE: (J-R)∇H(x,t) + GGᵀ·score_fn(x,t).

    With the exact energy-based score (score_fn = -∇H) this coincides
    with ph_vector_field to machine precision; a mismatched score shifts
    the drift by exactly GGᵀ·(score_fn + ∇H).
    """
    sc = np.asarray(score_fn(x, t), dtype=float)
    grad = model.gradient(x, t)
    if sc.shape != grad.shape:
        raise DimensionMismatch(f"score has shape {sc.shape}, expected {grad.shape}")
    return grad @ s.drift_matrix().T + sc @ s.gg_t().T


def _closed_loop_rhs(model: EnergyModel, s: StructureMatrices, perturbation: PerturbationModel | None):
    a_t = s.closed_loop_matrix().T

    if perturbation is None:
        def rhs(t, x):
            return model.gradient(x, t) @ a_t
    else:
        def rhs(t, x):
            return (model.gradient(x, t) + perturbation.delta(x, t)) @ a_t

    return rhs


def _rk4(rhs, x0: np.ndarray, times: np.ndarray) -> np.ndarray:
    states = np.empty((times.size, x0.size))
    states[0] = x0
    x = x0
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = x
    return states


def integrate_reverse(
    x0,
    t_span: tuple[float, float],
    model: EnergyModel,
    s: StructureMatrices,
    cfg: IntegratorConfig,
    perturbation: PerturbationModel | None = None,
) -> Trajectory:
    """Integrate the closed-loop ODE (optionally with perturbed gradient).

    Deterministic: no randomness anywhere in this operation. With a
    perturbation the field is (J-R-GGᵀ)(∇H + Δ), the perturbation acting
    on the gradient, not on the closed-loop output.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (s.n,):
        raise DimensionMismatch(f"x0 has shape {x0.shape}, expected ({s.n},)")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    rhs = _closed_loop_rhs(model, s, perturbation)

    if cfg.method == "fixed_rk4":
        times = TimeGrid(t0, t1, cfg.dt).times()
        states = _rk4(rhs, x0, times)
        tag = "fixed_rk4"
    else:
        times = np.linspace(t0, t1, cfg.n_eval)
        sol = solve_ivp(rhs, (t0, t1), x0, method="RK45", t_eval=times,
                        rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)
        if not sol.success:
            raise StepFailure(sol.message)
        states = sol.y.T
        tag = "adaptive_rk45"

    if not np.all(np.isfinite(states)):
        raise NonFiniteState("non-finite state during reverse integration")
    return Trajectory(times=times, states=states, seed=None, integrator_tag=tag)


def integrate_reverse_batch(
    x0_batch,
    t_span: tuple[float, float],
    model: EnergyModel,
    s: StructureMatrices,
    cfg: IntegratorConfig,
    perturbation: PerturbationModel | None = None,
) -> list[Trajectory]:
    """Integrate a batch of starts; each trajectory is independent."""
    return [integrate_reverse(x0, t_span, model, s, cfg, perturbation) for x0 in np.asarray(x0_batch, dtype=float)]


def simulate_reverse_sde(init, grid: TimeGrid, model: EnergyModel, s: StructureMatrices,
                         base_seed: int, score_fn=None, thin: int = 1) -> Ensemble:
    """Euler-Maruyama sampling of the stochastic reverse dynamics.

    Drift is reverse_sde_drift (defaulting to the exact energy-based
    score) and the noise term is G dW, reusing the forward stepping
    machinery. Provided for empirical comparison with the deterministic
    sampler; the deterministic ODE is the primary sampler.
    """
    if score_fn is None:
        def score_fn(x, t):
            return score(model, x, t)

    a_t = s.drift_matrix().T
    ggt_t = s.gg_t().T

    def drift(x_batch, t):
        return model.gradient(x_batch, t) @ a_t + np.asarray(score_fn(x_batch, t)) @ ggt_t

    return _simulate_em(drift, init, grid, s, base_seed, thin, "reverse_sde_euler_maruyama")


def classify_equilibrium(x, minima, tol: float) -> int | None:
    """Index of the unique minimum within distance tol of x, else None.

    Raises AmbiguousMinima if any two configured minima are closer than
    2·tol (the tolerance balls would overlap). Ties on the boundary go to
    the smallest index.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    minima = np.atleast_2d(np.asarray(minima, dtype=float))
    if minima.shape[0] == 0:
        raise ValueError("minima must be nonempty")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if x.shape != (minima.shape[1],):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({minima.shape[1]},)")
    if minima.shape[0] > 1:
        diffs = minima[:, None, :] - minima[None, :, :]
        dists = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dists, np.inf)
        if np.min(dists) < 2.0 * tol:
            raise AmbiguousMinima(
                f"two minima are {np.min(dists):.3e} apart, closer than 2*tol={2*tol:.3e}"
            )
    d = np.linalg.norm(minima - x, axis=1)
    best = int(np.argmin(d))
    return best if d[best] <= tol else None
