"""Simultaneous learning of Hamiltonians and Lie-algebra symmetry generators.

The package learns a scalar Hamiltonian model from noisy vector-field
snapshots while fitting a basis of affine Lie-algebra generators under which
the learned function is invariant, then verifies the result with symplectic
rollouts, energy traces, and the conserved quantities the symmetries imply.
"""

from .datagen import (
    SamplingDomain,
    SnapshotDataset,
    build_dataset,
    monte_carlo_phase_samples,
    sample_cart_pendulum_initials,
    sample_two_body_initials,
)
from .diffnet import ExactHamiltonianModel, ScalarNet, VectorNet
from .errors import (
    ConfigError,
    DataError,
    DimensionMismatchError,
    DomainError,
    IntegrationError,
    NumericError,
    SymhnnError,
)
from .geometry import (
    AffineGenerator,
    PhasePoint,
    conserved_quantity,
    cotangent_lift,
    directional_derivative,
    exp_generator,
    fundamental_vector_field,
    inner_product,
    lie_bracket,
    norm,
    symplectic_matrix,
)
from .integrators import Trajectory, implicit_midpoint, rk4, rk4_fixed, rk4_step
from .systems import ReferenceSystem, cart_pendulum, make_system, two_body, vector_field
from .training import TrainConfig, TrainedModel, bracket_prior, train

__version__ = "0.1.0"

__all__ = [
    "AffineGenerator",
    "ConfigError",
    "DataError",
    "DimensionMismatchError",
    "DomainError",
    "ExactHamiltonianModel",
    "IntegrationError",
    "NumericError",
    "PhasePoint",
    "ReferenceSystem",
    "SamplingDomain",
    "ScalarNet",
    "SnapshotDataset",
    "SymhnnError",
    "TrainConfig",
    "TrainedModel",
    "Trajectory",
    "VectorNet",
    "bracket_prior",
    "build_dataset",
    "cart_pendulum",
    "conserved_quantity",
    "cotangent_lift",
    "directional_derivative",
    "exp_generator",
    "fundamental_vector_field",
    "implicit_midpoint",
    "inner_product",
    "lie_bracket",
    "make_system",
    "monte_carlo_phase_samples",
    "norm",
    "rk4",
    "rk4_fixed",
    "rk4_step",
    "sample_cart_pendulum_initials",
    "sample_two_body_initials",
    "symplectic_matrix",
    "train",
    "two_body",
    "vector_field",
]
