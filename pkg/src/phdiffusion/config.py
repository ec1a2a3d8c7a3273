"""Experiment configuration: schema, validation, and lossless round-trip.

A configuration is a single JSON file describing the energy model, the
structure matrices, optional forward and reverse sections, and the list
of verification gates to run. Two configurations ship with the package
(``ou1d`` and ``quartic2d``); they can be referenced by bare name on the
command line.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .energy import EnergyModel, make_energy
from .errors import ConfigError, StructureValidationError
from .reverse import ConstantPerturbation, IntegratorConfig, PerturbationModel
from .structure import StructureMatrices, validate_structure

KNOWN_CHECKS = (
    "structure",
    "gradient",
    "feedback_identity",
    "drift_equivalence",
    "lyapunov",
    "energy_balance",
    "forward_moments",
    "contraction",
    "iss",
    "mode_recovery",
    "sliced_w2",
)


@dataclass(frozen=True)
class InitSpec:
    """Initial-condition distribution: isotropic normal or per-axis uniform."""

    kind: str  # "normal" | "uniform"
    mean: tuple[float, ...] = (0.0,)
    std: float = 1.0
    low: float = -1.0
    high: float = 1.0

    def sample(self, n_samples: int, dim: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "normal":
            return np.asarray(self.mean) + self.std * rng.standard_normal((n_samples, dim))
        return rng.uniform(self.low, self.high, size=(n_samples, dim))

    def to_dict(self) -> dict:
        if self.kind == "normal":
            return {"kind": "normal", "mean": list(self.mean), "std": self.std}
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class ForwardSpec:
    n_trajectories: int
    init: InitSpec
    t_end: float
    dt: float
    base_seed: int
    t_start: float = 0.0
    thin: int = 1

    def to_dict(self) -> dict:
        return {
            "n_trajectories": self.n_trajectories,
            "init": self.init.to_dict(),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "dt": self.dt,
            "base_seed": self.base_seed,
            "thin": self.thin,
        }


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str  # "constant"
    value: tuple[float, ...]

    def build(self) -> PerturbationModel:
        return ConstantPerturbation(list(self.value))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": list(self.value)}


@dataclass(frozen=True)
class ReverseSpec:
    n_starts: int
    init: InitSpec
    t_end: float
    integrator: IntegratorConfig
    base_seed: int
    t_start: float = 0.0
    perturbation: PerturbationSpec | None = None
    classify_tol: float = 1e-3

    def to_dict(self) -> dict:
        integ = {
            "method": self.integrator.method,
            "rel_tol": self.integrator.rel_tol,
            "abs_tol": self.integrator.abs_tol,
            "n_eval": self.integrator.n_eval,
        }
        if self.integrator.dt is not None:
            integ["dt"] = self.integrator.dt
        if np.isfinite(self.integrator.max_step):
            integ["max_step"] = self.integrator.max_step
        return {
            "n_starts": self.n_starts,
            "init": self.init.to_dict(),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "integrator": integ,
            "base_seed": self.base_seed,
            "perturbation": None if self.perturbation is None else self.perturbation.to_dict(),
            "classify_tol": self.classify_tol,
        }


@dataclass(frozen=True)
class CompareSpec:
    """Settings for the drift-comparison command."""

    n_points: int = 1000
    low: float = -2.0
    high: float = 2.0
    score_scale: float = 1.0
    sde_samples: int = 256
    sde_dt: float = 0.01
    t_end: float = 10.0
    base_seed: int = 0
    n_projections: int = 64

    def to_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "low": self.low,
            "high": self.high,
            "score_scale": self.score_scale,
            "sde_samples": self.sde_samples,
            "sde_dt": self.sde_dt,
            "t_end": self.t_end,
            "base_seed": self.base_seed,
            "n_projections": self.n_projections,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    energy_name: str
    energy_params: dict
    structure_arrays: dict
    forward: ForwardSpec | None
    reverse: ReverseSpec | None
    compare: CompareSpec
    checks: tuple[str, ...]
    output_dir: str

    def build_energy(self) -> EnergyModel:
        return make_energy(self.energy_name, self.energy_params)

    def build_structure(self) -> StructureMatrices:
        return validate_structure(
            self.structure_arrays["j"], self.structure_arrays["r"], self.structure_arrays["g"]
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "energy": {"name": self.energy_name, "params": self.energy_params},
            "structure": self.structure_arrays,
            "forward": None if self.forward is None else self.forward.to_dict(),
            "reverse": None if self.reverse is None else self.reverse.to_dict(),
            "compare": self.compare.to_dict(),
            "checks": list(self.checks),
            "output_dir": self.output_dir,
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with all section seeds overridden by one value."""
        d = self.to_dict()
        if d["forward"] is not None:
            d["forward"]["base_seed"] = seed
        if d["reverse"] is not None:
            d["reverse"]["base_seed"] = seed
        d["compare"]["base_seed"] = seed
        return config_from_dict(d)


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config.to_dict()).encode()).hexdigest()[:16]


def _require(data: dict, key: str, path: str):
    if key not in data:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return data[key]


def _positive(value, path: str) -> float:
    value = float(value)
    if value <= 0:
        raise ConfigError(path, "must be positive")
    return value


def _seed(value, path: str) -> int:
    value = int(value)
    if not 0 <= value < 2**63:
        raise ConfigError(path, "must be a non-negative 63-bit integer")
    return value


def _parse_init(data: dict, path: str) -> InitSpec:
    kind = _require(data, "kind", path)
    if kind == "normal":
        mean = tuple(float(v) for v in _require(data, "mean", path))
        return InitSpec(kind="normal", mean=mean, std=_positive(_require(data, "std", path), f"{path}.std"))
    if kind == "uniform":
        low = float(_require(data, "low", path))
        high = float(_require(data, "high", path))
        if high <= low:
            raise ConfigError(f"{path}.high", "must exceed low")
        return InitSpec(kind="uniform", low=low, high=high)
    raise ConfigError(f"{path}.kind", f"unknown init kind {kind!r}")


def _parse_integrator(data: dict, path: str) -> IntegratorConfig:
    method = data.get("method", "adaptive_rk45")
    try:
        return IntegratorConfig(
            method=method,
            dt=float(data["dt"]) if "dt" in data else None,
            rel_tol=float(data.get("rel_tol", 1e-6)),
            abs_tol=float(data.get("abs_tol", 1e-9)),
            max_step=float(data.get("max_step", np.inf)),
            n_eval=int(data.get("n_eval", 200)),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def config_from_dict(data: dict) -> ExperimentConfig:
    name = str(_require(data, "name", ""))
    energy = _require(data, "energy", "")
    energy_name = str(_require(energy, "name", "energy"))
    energy_params = dict(energy.get("params", {}))
    try:
        model = make_energy(energy_name, energy_params)
    except KeyError as exc:
        raise ConfigError("energy.name", str(exc)) from None

    structure = _require(data, "structure", "")
    for key in ("j", "r", "g"):
        _require(structure, key, "structure")
    try:
        s = validate_structure(structure["j"], structure["r"], structure["g"])
    except StructureValidationError as exc:
        raise ConfigError("structure", str(exc)) from None
    if s.n != model.dim:
        raise ConfigError("structure", f"state dimension {s.n} != energy dimension {model.dim}")

    forward = None
    if data.get("forward") is not None:
        f = data["forward"]
        init = _parse_init(_require(f, "init", "forward"), "forward.init")
        if init.kind == "normal" and len(init.mean) != model.dim:
            raise ConfigError("forward.init.mean", f"expected {model.dim} entries")
        forward = ForwardSpec(
            n_trajectories=int(_require(f, "n_trajectories", "forward")),
            init=init,
            t_start=float(f.get("t_start", 0.0)),
            t_end=float(_require(f, "t_end", "forward")),
            dt=_positive(_require(f, "dt", "forward"), "forward.dt"),
            base_seed=_seed(_require(f, "base_seed", "forward"), "forward.base_seed"),
            thin=int(f.get("thin", 1)),
        )
        if forward.n_trajectories < 0:
            raise ConfigError("forward.n_trajectories", "must be non-negative")
        if forward.t_end <= forward.t_start:
            raise ConfigError("forward.t_end", "must exceed t_start")
        if forward.thin < 1:
            raise ConfigError("forward.thin", "must be >= 1")

    reverse = None
    if data.get("reverse") is not None:
        r = data["reverse"]
        init = _parse_init(_require(r, "init", "reverse"), "reverse.init")
        if init.kind == "normal" and len(init.mean) != model.dim:
            raise ConfigError("reverse.init.mean", f"expected {model.dim} entries")
        pert = None
        if r.get("perturbation") is not None:
            p = r["perturbation"]
            kind = _require(p, "kind", "reverse.perturbation")
            if kind != "constant":
                raise ConfigError("reverse.perturbation.kind", f"unknown kind {kind!r}")
            value = tuple(float(v) for v in _require(p, "value", "reverse.perturbation"))
            if len(value) != model.dim:
                raise ConfigError("reverse.perturbation.value", f"expected {model.dim} entries")
            pert = PerturbationSpec(kind="constant", value=value)
        reverse = ReverseSpec(
            n_starts=int(_require(r, "n_starts", "reverse")),
            init=init,
            t_start=float(r.get("t_start", 0.0)),
            t_end=float(_require(r, "t_end", "reverse")),
            integrator=_parse_integrator(r.get("integrator", {}), "reverse.integrator"),
            base_seed=_seed(_require(r, "base_seed", "reverse"), "reverse.base_seed"),
            perturbation=pert,
            classify_tol=_positive(r.get("classify_tol", 1e-3), "reverse.classify_tol"),
        )
        if reverse.n_starts < 0:
            raise ConfigError("reverse.n_starts", "must be non-negative")
        if reverse.t_end <= reverse.t_start:
            raise ConfigError("reverse.t_end", "must exceed t_start")

    if forward is None and reverse is None:
        raise ConfigError("forward", "at least one of forward/reverse must be present")

    c = data.get("compare", {}) or {}
    compare = CompareSpec(
        n_points=int(c.get("n_points", 1000)),
        low=float(c.get("low", -2.0)),
        high=float(c.get("high", 2.0)),
        score_scale=float(c.get("score_scale", 1.0)),
        sde_samples=int(c.get("sde_samples", 256)),
        sde_dt=_positive(c.get("sde_dt", 0.01), "compare.sde_dt"),
        t_end=_positive(c.get("t_end", 10.0), "compare.t_end"),
        base_seed=_seed(c.get("base_seed", 0), "compare.base_seed"),
        n_projections=int(c.get("n_projections", 64)),
    )

    checks = tuple(str(c) for c in data.get("checks", []))
    for check in checks:
        if check not in KNOWN_CHECKS:
            raise ConfigError("checks", f"unknown check {check!r}; known: {', '.join(KNOWN_CHECKS)}")

    return ExperimentConfig(
        name=name,
        energy_name=energy_name,
        energy_params=energy_params,
        structure_arrays={k: structure[k] for k in ("j", "r", "g")},
        forward=forward,
        reverse=reverse,
        compare=compare,
        checks=checks,
        output_dir=str(data.get("output_dir", f"runs/{name}")),
    )


def builtin_config_path(name: str) -> Path:
    """Path of a shipped configuration (``ou1d`` or ``quartic2d``)."""
    ref = resources.files("phdiffusion") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError("config", f"no shipped configuration named {name!r}")
    return Path(str(ref))


def load_config(path_or_name: str) -> ExperimentConfig:
    """Load a configuration from a file path or a shipped config name."""
    path = Path(path_or_name)
    if not path.is_file() and "/" not in str(path_or_name) and not str(path_or_name).endswith(".json"):
        path = builtin_config_path(str(path_or_name))
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return config_from_dict(data)
