"""Fluctuation-dissipation analysis of the relaxed chain.

In equilibrium (one bath, or two baths at equal temperature) the noise
matrix equals the thermal factor times the dissipative part of the
response. With two baths at different temperatures a surplus term appears,
built from the commutator of the response matrix with the diagonal thermal
matrix; it is proportional to the cross response linking the two end
oscillators and carries the steady heat flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baths import thermal_factor
from .chain import SystemMatrices
from .errors import ConsistencyFailure, UnsupportedDimension
from .greens import noise_matrix, retarded_matrix

__all__ = [
    "ThermalMatrix",
    "FdrDecomposition",
    "J_STRUCTURE",
    "thermal_matrix",
    "commutator_term",
    "fdr_decompose",
    "equilibrium_fdr_residual",
]

# antisymmetric structure matrix of the two-oscillator commutator:
# J^dagger = J^-1 = -J
J_STRUCTURE = np.array([[0.0, 1.0], [-1.0, 0.0]])

# internal agreement demanded between the direct commutator and its closed form
_COMMUTATOR_TOL = 1e-12


@dataclass
class ThermalMatrix:
    """diag(coth(beta_i kappa / 2)) and its elementwise square root."""

    kappa: float
    f_matrix: np.ndarray
    f_sqrt: np.ndarray


@dataclass
class FdrDecomposition:
    """Noise matrix split into its equilibrium-form part plus the surplus.

    ``residual`` is the relative Frobenius defect of
    conventional + bias - direct_hadamard; the split is exact at late
    times, so the residual measures numerical error only.
    """

    kappa: float
    conventional: np.ndarray
    bias: np.ndarray
    direct_hadamard: np.ndarray
    residual: float


def thermal_matrix(kappa: float, baths) -> ThermalMatrix:
    """Diagonal thermal factor matrix; kappa = 0 is a pole and raises."""
    f = np.array([thermal_factor(kappa, b.beta) for b in baths], dtype=float)
    # entries are negative for kappa < 0; the square root then lives on the
    # imaginary axis, consistent with f_sqrt @ X @ f_sqrt == f_matrix @ X
    # for the even kernels it multiplies
    fs = np.sqrt(f.astype(complex))
    return ThermalMatrix(kappa=float(kappa), f_matrix=np.diag(f), f_sqrt=np.diag(fs))


def _adjugate_inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of a 2x2 response matrix by adjugate over determinant.

    Equals the J-conjugation form J^-1 g J / det(g) for symmetric g; the
    adjugate keeps the evaluation well-conditioned near the normal modes.
    """
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    return np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det


def commutator_term(kappa: float, sys: SystemMatrices, baths) -> np.ndarray:
    """Surplus (bias) matrix [g, F] g^-1 Im g for the two-oscillator chain.

    The commutator is evaluated both directly and through its closed form
    -(coth(beta1 k/2) - coth(beta2 k/2)) * g_12 * J; disagreement beyond
    1e-12 of the operand scale raises :class:`ConsistencyFailure`.
    """
    if sys.n != 2:
        raise UnsupportedDimension("the commutator structure is two-dimensional")
    if kappa == 0.0:
        raise ValueError("kappa = 0 is a pole of the thermal matrix")
    g = retarded_matrix(kappa, sys, baths)
    f = np.array([thermal_factor(kappa, b.beta) for b in baths], dtype=float)

    direct = g * f[None, :] - f[:, None] * g           # g F - F g
    closed = -(f[0] - f[1]) * g[0, 1] * J_STRUCTURE
    scale = max(1.0, float(np.max(np.abs(f)) * np.linalg.norm(g)))
    defect = float(np.linalg.norm(direct - closed))
    if defect > _COMMUTATOR_TOL * scale:
        raise ConsistencyFailure(
            f"commutator closed form disagrees with direct evaluation at kappa={kappa}: "
            f"defect {defect:.3e} vs scale {scale:.3e}"
        )
    return direct @ _adjugate_inverse(g) @ g.imag


def fdr_decompose(kappa: float, sys: SystemMatrices, baths) -> FdrDecomposition:
    """Split the noise matrix into conventional + bias and report the defect."""
    if sys.n != 2:
        raise UnsupportedDimension("decomposition implemented for two oscillators")
    g = retarded_matrix(kappa, sys, baths)
    f = np.array([thermal_factor(kappa, b.beta) for b in baths], dtype=float)
    conventional = f[:, None] * g.imag
    bias = commutator_term(kappa, sys, baths)
    direct = noise_matrix(kappa, sys, baths)
    scale = np.linalg.norm(direct)
    defect = np.linalg.norm(conventional + bias - direct)
    residual = float(defect / scale) if scale > 0 else float(defect)
    return FdrDecomposition(
        kappa=float(kappa),
        conventional=conventional,
        bias=bias,
        direct_hadamard=direct,
        residual=residual,
    )


def equilibrium_fdr_residual(kappa: float, sys: SystemMatrices, baths) -> float:
    """Relative defect of the single-oscillator relation noise = coth * Im g."""
    if sys.n != 1:
        raise UnsupportedDimension("equilibrium residual is a single-oscillator check")
    if kappa == 0.0:
        raise ValueError("kappa = 0 is a pole of the thermal factor")
    g = retarded_matrix(kappa, sys, baths)
    gh = noise_matrix(kappa, sys, baths)
    coth = thermal_factor(kappa, baths[0].beta)
    lhs = gh.real
    rhs = coth * g.imag
    scale = np.linalg.norm(lhs)
    if scale == 0.0:
        return float(np.linalg.norm(lhs - rhs))
    return float(np.linalg.norm(lhs - rhs) / scale)
