"""Evolution equations with generalized (Sonine) memory kernels.

Kernels and their symbols, discrete memory operators, nonlinear time
stepping, additive noise through the effective kernel, and numerical
certificates of the dissipativity and subordination identities.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .kernels import KernelSpec, catalogue, make_kernel, psi, sonine_conjugate, verify_kernel_conditions
from .memory import MemoryScheme, apply_full, apply_memory, cq_weights, make_scheme, pi_weights
from .operators import (
    OperatorModel,
    SpatialGrid,
    fast_diffusion_operator,
    p_laplace_operator,
    pointwise_operator,
    porous_medium_operator,
    relaxation_operator,
    validate_H_conditions,
    zero_operator,
)
from .solver import FixedPointOptions, NewtonOptions, SolveConfig, Trajectory, choose_gamma, run, step, weighted_fixed_point
from .stochastic import effective_kernel, make_noise_model, sample_noise_paths, solve_spde

__all__ = [
    "__version__",
    "KernelSpec",
    "catalogue",
    "make_kernel",
    "psi",
    "sonine_conjugate",
    "verify_kernel_conditions",
    "MemoryScheme",
    "apply_full",
    "apply_memory",
    "cq_weights",
    "make_scheme",
    "pi_weights",
    "OperatorModel",
    "SpatialGrid",
    "fast_diffusion_operator",
    "p_laplace_operator",
    "pointwise_operator",
    "porous_medium_operator",
    "relaxation_operator",
    "validate_H_conditions",
    "zero_operator",
    "FixedPointOptions",
    "NewtonOptions",
    "SolveConfig",
    "Trajectory",
    "choose_gamma",
    "run",
    "step",
    "weighted_fixed_point",
    "effective_kernel",
    "make_noise_model",
    "sample_noise_paths",
    "solve_spde",
]
