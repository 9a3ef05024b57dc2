"""Frequency-domain response of the interacting chain.

The dressed kernel at frequency kappa is

    M(kappa) = m (-kappa^2 I + Omega^2) - 2 i m kappa diag(gamma_i D_i(kappa))

with D_i the Drude profile of bath i; the retarded matrix is its inverse.
The frequency-renormalising real part of the bath self-energy is absorbed
into Omega^2, so only the dissipative part appears explicitly. The noise
matrix is the bath-noise spectrum propagated through the retarded response.

Everything here is pointwise in kappa and embarrassingly parallel; grids
and integration live elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baths import BathSpec, drude_profile, hadamard_free, im_retarded_free
from .chain import SystemMatrices
from .errors import SingularMatrix

__all__ = [
    "SpectralSample",
    "dressed_kernel",
    "retarded_matrix",
    "noise_matrix",
    "im_identity_residual",
    "bath_im_diag",
    "bath_hadamard_diag",
    "sample",
]


@dataclass
class SpectralSample:
    """Retarded and (optionally) noise matrix at one frequency."""

    kappa: float
    retarded: np.ndarray
    hadamard: Optional[np.ndarray] = None


def bath_im_diag(kappa: float, baths) -> np.ndarray:
    """Diagonal of the dissipative bath kernels at kappa."""
    return np.array([im_retarded_free(kappa, b) for b in baths], dtype=float)


def bath_hadamard_diag(kappa: float, baths) -> np.ndarray:
    """Diagonal of the bath noise spectra at kappa."""
    return np.array([hadamard_free(kappa, b) for b in baths], dtype=float)


def dressed_kernel(kappa: float, sys: SystemMatrices, baths) -> np.ndarray:
    """M(kappa), the inverse of the retarded matrix."""
    n = sys.n
    if len(baths) != n:
        raise ValueError(f"expected {n} baths, got {len(baths)}")
    prof = np.array([drude_profile(kappa, b.cutoff) for b in baths], dtype=float)
    m = sys.mass
    kern = m * (-(kappa**2) * np.eye(n) + sys.omega2).astype(complex)
    kern[np.diag_indices(n)] -= 2j * m * kappa * sys.gamma_diag * prof
    return kern


def _invert_2x2(mat: np.ndarray, kappa: float) -> np.ndarray:
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    if det == 0:
        raise SingularMatrix(kappa)
    adj = np.array([[mat[1, 1], -mat[0, 1]], [-mat[1, 0], mat[0, 0]]])
    return adj / det


def retarded_matrix(kappa: float, sys: SystemMatrices, baths) -> np.ndarray:
    """Retarded response matrix: symmetric, complex, analytic for gamma > 0.

    Uses the closed-form adjugate for N == 2 (exactly reproducible by a
    high-precision oracle), a pivoted solve otherwise.
    """
    kern = dressed_kernel(kappa, sys, baths)
    if sys.n == 2:
        return _invert_2x2(kern, kappa)
    try:
        return np.linalg.inv(kern)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(kappa, str(exc)) from None


def noise_matrix(kappa: float, sys: SystemMatrices, baths) -> np.ndarray:
    """Noise (symmetrised correlation) matrix at late times.

    g C H0 C g^dagger with H0 the diagonal bath noise spectrum; Hermitian
    and positive semidefinite at every real kappa.
    """
    g = retarded_matrix(kappa, sys, baths)
    h0 = bath_hadamard_diag(kappa, baths)
    e = sys.coupling_diag
    return (g * (e**2 * h0)) @ g.conj().T


def im_identity_residual(kappa: float, sys: SystemMatrices, baths) -> float:
    """Relative defect of Im g = g C (Im G_R0) C g(-kappa).

    This is an exact operator identity of the dressed response, so the
    residual measures numerical error only.
    """
    g = retarded_matrix(kappa, sys, baths)
    gneg = retarded_matrix(-kappa, sys, baths)
    e = sys.coupling_diag
    im0 = bath_im_diag(kappa, baths)
    rhs = (g * (e**2 * im0)) @ gneg
    lhs = g.imag
    scale = np.linalg.norm(lhs)
    if scale == 0.0:
        return float(np.linalg.norm(lhs - rhs))
    return float(np.linalg.norm(lhs - rhs) / scale)


def sample(kappa: float, sys: SystemMatrices, baths, with_hadamard: bool = True) -> SpectralSample:
    """Bundle the retarded (and optionally noise) matrix at one frequency."""
    g = retarded_matrix(kappa, sys, baths)
    h = noise_matrix(kappa, sys, baths) if with_hadamard else None
    return SpectralSample(kappa=float(kappa), retarded=g, hadamard=h)
