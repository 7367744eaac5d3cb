"""Sparse, interpretable Hamiltonians learned through a symplectic integrator."""

from .basis import FunctionBasis, build_monomial_basis, build_trig_basis
from .data import Dataset, generate_trajectory, generate_transitions
from .evaluation import param_count, prediction_error, rollout_divergence, sparsity_stats
from .integrators import integrate
from .model import SparseHamiltonian, coefficient_recovery, extract_equation
from .phase import PhaseState, Trajectory
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FunctionBasis",
    "PhaseState",
    "SparseHamiltonian",
    "TrainConfig",
    "Trajectory",
    "build_monomial_basis",
    "build_trig_basis",
    "coefficient_recovery",
    "extract_equation",
    "generate_trajectory",
    "generate_transitions",
    "integrate",
    "param_count",
    "prediction_error",
    "rollout_divergence",
    "sparsity_stats",
    "train",
]
