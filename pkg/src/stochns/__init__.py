"""Pseudo-spectral stochastic Navier-Stokes simulator with dissipation-bound audits."""

__version__ = "0.1.0"

from .spectral_field import (  # noqa: E402
    FourierField,
    GridSpec,
    grad_norm_sq,
    l2_norm_sq,
    leray_project,
    nonlinear_term,
    random_divfree_field,
)
from .forcing import DeterministicForce, ForcedMode, NoiseSpec, basis_field, compute_F_L, compute_G  # noqa: E402
from .integrator import SolverParams, SolverState, run_trajectory, step  # noqa: E402
from .statistics import TrajectoryStats, EnsembleStats, ensemble_reduce, energy_balance_residual  # noqa: E402
from .bounds import AuditInputs, BoundReport, audit  # noqa: E402

__all__ = [
    "__version__",
    "FourierField", "GridSpec", "grad_norm_sq", "l2_norm_sq", "leray_project",
    "nonlinear_term", "random_divfree_field",
    "DeterministicForce", "ForcedMode", "NoiseSpec", "basis_field", "compute_F_L", "compute_G",
    "SolverParams", "SolverState", "run_trajectory", "step",
    "TrajectoryStats", "EnsembleStats", "ensemble_reduce", "energy_balance_residual",
    "AuditInputs", "BoundReport", "audit",
]
