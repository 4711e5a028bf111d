"""Parabolic problems on evolving Hilbert spaces, in pullback coordinates."""
from .errors import (
    BlowUpError,
    CompatibilityError,
    ConfigError,
    DimensionError,
    EvoSpaceError,
    MemoryGuardError,
    PreconditionError,
    SingularGramError,
    StencilError,
    TimeDomainError,
)
from .estimates import (
    EstimateLedger,
    apriori_dotuN,
    apriori_uN,
    build_ledger,
    convergence_study,
    energy_identity_residual,
    gamma_sweep,
    inf_sup_estimate,
    uniqueness_check,
)
from .galerkin import GalerkinSystem, StepperConfig, assemble, build_initial_data, project, solve, transported_basis_check
from .instances import InstanceSpec, Profile, make_instance, manufacture, standard_exact_solution
from .problem import ParabolicProblem, validate_A, validate_L
from .space import SpaceFamily, TimeGrid, check_compatibility, lambda_form, theta
from .trajectories import Trajectory, l2_norm, strong_material_derivative, transport_residual

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
