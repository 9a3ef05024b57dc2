"""Chain parameters and the system matrices built from them.

The model is a short harmonic chain (validated for two oscillators, the
assembly is written for general N) with nearest-neighbour coupling sigma,
uniform mass, and one private bath per oscillator. Interior oscillators of
longer chains carry a zero-coupling bath so the coupling matrix stays
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baths import BathSpec, damping_constant
from .errors import StabilityViolation

__all__ = ["ChainParams", "SystemMatrices", "build_matrices"]


@dataclass(frozen=True)
class ChainParams:
    """Physical parameters of the chain.

    ``omega_r`` holds the renormalised oscillator frequencies (the bare
    frequencies never enter the numerics). ``sigma`` is the inter-oscillator
    coupling: a scalar for N == 2, a length N-1 sequence for longer chains,
    ignored (must be 0 or absent) for a single oscillator.
    """

    mass: float
    omega_r: tuple
    sigma: object = 0.0
    baths: tuple = field(default_factory=tuple)

    def __post_init__(self):
        omega = tuple(float(w) for w in np.atleast_1d(self.omega_r))
        object.__setattr__(self, "omega_r", omega)
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if len(omega) < 1:
            raise ValueError("need at least one oscillator")
        if any(w <= 0 for w in omega):
            raise ValueError(f"renormalised frequencies must be positive: {omega}")
        baths = tuple(self.baths)
        if len(baths) != len(omega):
            raise ValueError(
                f"need one bath per oscillator ({len(omega)}), got {len(baths)}"
            )
        if not all(isinstance(b, BathSpec) for b in baths):
            raise TypeError("baths must be BathSpec instances")
        object.__setattr__(self, "baths", baths)

    @property
    def n(self) -> int:
        return len(self.omega_r)

    def sigma_vector(self) -> np.ndarray:
        """Nearest-neighbour couplings as a length N-1 array."""
        n = self.n
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if n == 1:
            if sig.size and np.any(sig != 0.0):
                raise ValueError("single oscillator cannot carry a coupling")
            return np.zeros(0)
        if sig.size == 1:
            return np.full(n - 1, float(sig[0]))
        if sig.size != n - 1:
            raise ValueError(f"expected {n - 1} couplings, got {sig.size}")
        return sig


@dataclass(frozen=True)
class SystemMatrices:
    """Assembled matrices: frequency matrix, coupling matrix, damping matrix.

    omega2 is real symmetric (tridiagonal), coupling_c and gamma are diagonal.
    Immutable once built; safe to share between workers.
    """

    omega2: np.ndarray
    coupling_c: np.ndarray
    gamma: np.ndarray
    mass: float

    def __post_init__(self):
        for name in ("omega2", "coupling_c", "gamma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.omega2.shape[0]

    @property
    def gamma_diag(self) -> np.ndarray:
        return np.diag(self.gamma)

    @property
    def coupling_diag(self) -> np.ndarray:
        return np.diag(self.coupling_c)

    def normal_modes(self) -> np.ndarray:
        """Undamped normal-mode frequencies, ascending."""
        return np.sqrt(np.linalg.eigvalsh(self.omega2))


def build_matrices(params: ChainParams) -> SystemMatrices:
    """Assemble and validate the system matrices.

    Raises :class:`StabilityViolation` unless the frequency matrix is
    positive definite (for N == 2 this is omega1^2 * omega2^2 > sigma^2).
    """
    n = params.n
    omega2 = np.zeros((n, n))
    np.fill_diagonal(omega2, np.asarray(params.omega_r) ** 2)
    sig = params.sigma_vector()
    for i, s in enumerate(sig):
        omega2[i, i + 1] = omega2[i + 1, i] = s

    eigs = np.linalg.eigvalsh(omega2)
    if eigs.min() <= 0.0:
        raise StabilityViolation(
            f"frequency matrix not positive definite (min eigenvalue {eigs.min():g}); "
            "reduce |sigma| below the product of the end frequencies"
        )

    e = np.array([b.coupling_e for b in params.baths], dtype=float)
    coupling_c = np.diag(e)
    gamma = np.diag([damping_constant(ei, params.mass) for ei in e])
    return SystemMatrices(omega2=omega2, coupling_c=coupling_c, gamma=gamma, mass=params.mass)
