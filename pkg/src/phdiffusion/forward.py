"""Forward diffusion: Euler-Maruyama simulation of dx = (J-R)∇H dt + G dW.

Randomness is counter-based and reproducible: each trajectory draws its
noise from its own Philox stream keyed by (base_seed, trajectory index),
so ensembles are bit-identical across runs and independent of how
trajectories are scheduled. The stepping loop is vectorized across the
ensemble; trajectories are never coupled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyModel
from .errors import DimensionMismatch, EmptyEnsemble, NonFiniteState
from .structure import StructureMatrices

# Reserved stream index for initial-condition draws; trajectory indices
# must stay below this.
INIT_STREAM_INDEX = 2**64 - 1


def substream(base_seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by (base_seed, index): one stream per trajectory."""
    if not 0 <= base_seed < 2**64:
        raise ValueError("base_seed must fit in an unsigned 64-bit integer")
    key = np.array([base_seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid from t_start to t_end with step dt.

    The final step is truncated so the last grid point lands exactly on
    t_end; ``steps`` = ceil((t_end - t_start)/dt), with a small fuzz so
    an exactly-divisible horizon does not gain a spurious step.
    """

    t_start: float
    t_end: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def steps(self) -> int:
        return max(1, math.ceil((self.t_end - self.t_start) / self.dt - 1e-9))

    def times(self) -> np.ndarray:
        t = self.t_start + self.dt * np.arange(self.steps + 1)
        t[-1] = self.t_end
        return t


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed sequence of states plus reproducibility metadata."""

    times: np.ndarray
    states: np.ndarray
    seed: int | None = None
    integrator_tag: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise DimensionMismatch(
                f"states shape {states.shape} inconsistent with {times.shape[0]} time points"
            )
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class TrajectoryFailure:
    """A trajectory aborted on a non-finite state."""

    index: int
    step: int
    time: float


@dataclass(frozen=True)
class Ensemble:
    """Trajectories sharing one time grid, for Monte Carlo statistics.

    ``trajectories`` holds only the completed ones; aborted trajectories
    are listed in ``failures`` with the step at which they blew up.
    """

    grid: TimeGrid
    trajectories: list[Trajectory]
    base_seed: int
    failures: tuple[TrajectoryFailure, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        return len(self.trajectories)

    def states_at(self, t_index: int) -> np.ndarray:
        """(size, n) array of states at one stored time index."""
        if not self.trajectories:
            raise EmptyEnsemble("ensemble has no trajectories")
        return np.stack([traj.states[t_index] for traj in self.trajectories])

    def state_block(self) -> np.ndarray:
        """(times, size, n) array of all stored states."""
        if not self.trajectories:
            raise EmptyEnsemble("ensemble has no trajectories")
        return np.stack([traj.states for traj in self.trajectories], axis=1)


def euler_maruyama_step(
    x, t: float, dt: float, model: EnergyModel, s: StructureMatrices, noise
) -> np.ndarray:
    """One step x + (J-R)∇H(x,t)·dt + G·√dt·noise.

    ``noise`` is an m-vector of i.i.d. standard normal draws. Raises
    NonFiniteState if any output coordinate is NaN/Inf.
    """
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x.shape != (s.n,):
        raise DimensionMismatch(f"state has shape {x.shape}, expected ({s.n},)")
    if noise.shape != (s.m,):
        raise DimensionMismatch(f"noise has shape {noise.shape}, expected ({s.m},)")
    with np.errstate(over="ignore", invalid="ignore"):
        out = x + (s.drift_matrix() @ model.gradient(x, t)) * dt + (s.g @ noise) * math.sqrt(dt)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state after step at t={t}")
    return out


def _simulate_em(drift, init, grid: TimeGrid, s: StructureMatrices, base_seed: int,
                 thin: int, tag: str) -> Ensemble:
    """Shared Euler-Maruyama ensemble machinery.

    ``drift(X, t)`` maps a (N, n) batch of states to a (N, n) batch of
    drift vectors. Noise for trajectory k comes from substream(base_seed, k).
    """
    if thin < 1:
        raise ValueError("thin must be >= 1")
    init = [np.asarray(x0, dtype=float) for x0 in init]
    for k, x0 in enumerate(init):
        if x0.shape != (s.n,):
            raise DimensionMismatch(f"initial condition {k} has shape {x0.shape}, expected ({s.n},)")
    if not init:
        return Ensemble(grid=grid, trajectories=[], base_seed=base_seed)

    n_traj = len(init)
    times = grid.times()
    steps = grid.steps
    stored_idx = list(range(0, steps + 1, thin))
    if stored_idx[-1] != steps:
        stored_idx.append(steps)

    # Per-trajectory noise blocks, each from its own counter-based stream.
    noise = np.empty((n_traj, steps, s.m))
    for k in range(n_traj):
        noise[k] = substream(base_seed, k).standard_normal((steps, s.m))

    x = np.stack(init)
    alive = np.ones(n_traj, dtype=bool)
    failures: list[TrajectoryFailure] = []
    stored = np.empty((len(stored_idx), n_traj, s.n))
    stored[0] = x
    store_pos = 1
    g_t = s.g.T

    for k in range(steps):
        dt_k = times[k + 1] - times[k]
        with np.errstate(over="ignore", invalid="ignore"):
            x_new = x + drift(x, times[k]) * dt_k + (noise[:, k, :] @ g_t) * math.sqrt(dt_k)
        bad = alive & ~np.all(np.isfinite(x_new), axis=1)
        if np.any(bad):
            for idx in np.nonzero(bad)[0]:
                failures.append(TrajectoryFailure(index=int(idx), step=k + 1, time=float(times[k + 1])))
            alive &= ~bad
            x_new[~alive] = x[~alive]  # freeze dead rows; dropped below
        x = x_new
        if store_pos < len(stored_idx) and k + 1 == stored_idx[store_pos]:
            stored[store_pos] = x
            store_pos += 1

    stored_times = times[stored_idx]
    trajectories = [
        Trajectory(times=stored_times, states=stored[:, k, :], seed=base_seed, integrator_tag=tag)
        for k in range(n_traj)
        if alive[k]
    ]
    return Ensemble(grid=grid, trajectories=trajectories, base_seed=base_seed,
                    failures=tuple(failures))


def simulate_forward(init, grid: TimeGrid, model: EnergyModel, s: StructureMatrices,
                     base_seed: int, thin: int = 1) -> Ensemble:
    """Simulate the forward SDE for each initial condition.

    One trajectory per initial condition; identical inputs give
    bit-identical output regardless of scheduling. ``thin`` stores every
    k-th step plus the final state. Trajectories that blow up (NaN/Inf)
    are dropped and reported in ``Ensemble.failures``.
    """
    a = s.drift_matrix().T

    def drift(x_batch, t):
        return model.gradient(x_batch, t) @ a

    return _simulate_em(drift, init, grid, s, base_seed, thin, "euler_maruyama")


def ensemble_stats(e: Ensemble, t_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample covariance at one stored time index."""
    x = e.states_at(t_index)
    mean = x.mean(axis=0)
    if x.shape[0] < 2:
        cov = np.zeros((x.shape[1], x.shape[1]))
    else:
        cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    return mean, cov


def ou_analytic_moments(alpha: float, sigma: float, x0: float, t: float) -> tuple[float, float]:
    """Closed-form mean and variance of dx = -αx dt + σ dW from a point mass.

    mean = x0·e^(-αt), variance = (σ²/2α)(1 - e^(-2αt)). Oracle for the
    one-dimensional forward-simulation checks.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    mean = x0 * math.exp(-alpha * t)
    var = (sigma**2 / (2.0 * alpha)) * (1.0 - math.exp(-2.0 * alpha * t))
    return mean, var
