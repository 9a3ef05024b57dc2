"""Energy transport and fluctuation-dissipation diagnostics for a short
harmonic chain coupled to independent thermal baths."""

from .baths import BathSpec, coupling_from_damping, damping_constant, hadamard_free, im_retarded_free, thermal_factor
from .chain import ChainParams, SystemMatrices, build_matrices
from .errors import (
    ConfigError,
    ConsistencyFailure,
    NonConvergence,
    QuadratureNonConvergence,
    SingularMatrix,
    StabilityViolation,
    StepTooCoarse,
    UnsupportedDimension,
    UnsupportedMode,
)
from .fdr import FdrDecomposition, ThermalMatrix, commutator_term, equilibrium_fdr_residual, fdr_decompose, thermal_matrix
from .greens import SpectralSample, im_identity_residual, noise_matrix, retarded_matrix, sample
from .quadrature import FrequencyGrid, integrate, resonance_hints
from .timedomain import InitialState, RelaxationTrace, hadamard_free_time, retarded_time, transient_powers
from .transport import TransportReport, heat_current, p_gamma_infinity, p_xi_infinity, single_bath_balance

__version__ = "0.1.0"
