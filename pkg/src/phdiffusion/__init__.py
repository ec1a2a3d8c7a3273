"""Port-Hamiltonian diffusion dynamics.

Forward noising SDE dx = (J-R)∇H dt + G dW, feedback-controlled reverse
sampling ODE ẋ = (J-R-GGᵀ)∇H, and a verification suite that empirically
certifies the structural guarantees of the closed loop: energy
dissipation, Lyapunov stability, drift equivalence under the exact
energy-based score, robustness to bounded gradient error, and
contraction.
"""

from .analysis import (
    CheckRecord,
    EnergyBalanceReport,
    VerificationReport,
    empirical_energy_balance,
    energy_along_trajectory,
    lyapunov_rate_check,
    passivity_output,
    sliced_wasserstein2,
    wasserstein2_1d,
)
from .config import ExperimentConfig, builtin_config_path, config_from_dict, load_config
from .energy import (
    EnergyModel,
    QuadraticEnergy,
    QuarticWellEnergy,
    finite_diff_gradient,
    finite_diff_hessian,
    gaussian_log_density,
    hessian_trace_term,
    make_energy,
    register_energy,
    score,
)
from .errors import (
    AmbiguousMinima,
    ConfigError,
    DimensionMismatch,
    EmptyEnsemble,
    HessianUnavailable,
    InsufficientEnsemble,
    NonFiniteState,
    NotPD,
    PHDiffusionError,
    StepFailure,
    StructureValidationError,
    StructureViolation,
)
from .forward import (
    Ensemble,
    TimeGrid,
    Trajectory,
    TrajectoryFailure,
    ensemble_stats,
    euler_maruyama_step,
    ou_analytic_moments,
    simulate_forward,
    substream,
)
from .reverse import (
    ConstantPerturbation,
    IntegratorConfig,
    PerturbationModel,
    classify_equilibrium,
    feedback_control,
    integrate_reverse,
    integrate_reverse_batch,
    ph_vector_field,
    reverse_sde_drift,
    simulate_reverse_sde,
)
from .structure import (
    EffectiveDissipation,
    StructureMatrices,
    effective_dissipation,
    skew_power_check,
    validate_structure,
)

__version__ = "0.1.0"
