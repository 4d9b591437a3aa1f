"""cqsim: stochastic simulation of consistent classical-quantum hybrid dynamics.

The package integrates coupled Ito SDEs for a classical phase-space trajectory
and the quantum state conditioned on it, validates the decoherence-diffusion
positivity conditions, and verifies trajectory ensembles against an
independent finite-difference master-equation solver.
"""

__version__ = "0.1.0"

from .errors import (
    ContractError,
    CQSimError,
    DimensionError,
    DomainExitError,
    HermiticityError,
    PositivityError,
    StepSizeError,
    UsageError,
)
from .integrator import (
    CQStateDensity,
    CQStatePure,
    Trajectory,
    simulate,
    step_density,
    step_joint,
    step_pure,
    step_standard,
)
from .model import (
    CQModel,
    HamiltonianSpec,
    StandardSCModel,
    ValidationReport,
    build_hamiltonian_model,
    build_standard_semiclassical,
    poisson_bracket,
    validate,
    validate_probes,
)
from .numlin import factor_sigma, is_psd, pinv, principal_sqrt

__all__ = [
    "__version__",
    "CQSimError",
    "ContractError",
    "DimensionError",
    "DomainExitError",
    "HermiticityError",
    "PositivityError",
    "StepSizeError",
    "UsageError",
    "CQStateDensity",
    "CQStatePure",
    "Trajectory",
    "simulate",
    "step_density",
    "step_joint",
    "step_pure",
    "step_standard",
    "CQModel",
    "HamiltonianSpec",
    "StandardSCModel",
    "ValidationReport",
    "build_hamiltonian_model",
    "build_standard_semiclassical",
    "poisson_bracket",
    "validate",
    "validate_probes",
    "factor_sigma",
    "is_psd",
    "pinv",
    "principal_sqrt",
]
