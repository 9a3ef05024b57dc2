"""Free-bath spectral kernels.

Each oscillator couples bilinearly to its own Ohmic bath. The dissipative
part of the bath response is linear in frequency with an optional Drude
roll-off, and the thermal noise spectrum follows from it through the
coth(beta*kappa/2) factor. All functions accept scalars or numpy arrays
in ``kappa`` and return matching shapes.

Units: hbar = k_B = 1; beta is an inverse energy, frequencies are energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BathSpec",
    "coupling_from_damping",
    "damping_constant",
    "drude_profile",
    "im_retarded_free",
    "hadamard_free",
    "thermal_factor",
]

# seam below which coth(x) switches to its Laurent series; both branches
# agree to ~1e-13 there
_COTH_SERIES_THRESHOLD = 1e-4


@dataclass(frozen=True)
class BathSpec:
    """One private bath: inverse temperature, coupling strength, Drude cutoff.

    ``beta`` and ``cutoff`` may be ``math.inf`` (zero temperature / strict
    Ohmic). ``label`` identifies which end oscillator the bath belongs to.
    """

    beta: float
    coupling_e: float
    cutoff: float = math.inf
    label: int = 1

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be > 0 (or inf), got {self.beta}")
        if not (self.cutoff > 0):
            raise ValueError(f"cutoff must be > 0 (or inf), got {self.cutoff}")

    @property
    def temperature(self) -> float:
        return 0.0 if math.isinf(self.beta) else 1.0 / self.beta

    def damping(self, mass: float) -> float:
        return damping_constant(self.coupling_e, mass)


def damping_constant(coupling_e: float, mass: float) -> float:
    """Friction rate gamma = e^2 / (8 pi m) induced by the bath coupling."""
    return coupling_e**2 / (8.0 * math.pi * mass)


def coupling_from_damping(gamma: float, mass: float) -> float:
    """Inverse of :func:`damping_constant`: e = sqrt(8 pi m gamma)."""
    if gamma < 0:
        raise ValueError("damping must be nonnegative")
    return math.sqrt(8.0 * math.pi * mass * gamma)


def drude_profile(kappa, cutoff):
    """Lorentzian high-frequency roll-off Lambda^2 / (Lambda^2 + kappa^2)."""
    kappa = np.asarray(kappa, dtype=float)
    if math.isinf(cutoff):
        out = np.ones_like(kappa)
    else:
        out = cutoff**2 / (cutoff**2 + kappa**2)
    return out if out.ndim else float(out)


def im_retarded_free(kappa, bath: BathSpec):
    """Dissipative part of the free-bath response: (kappa / 4 pi) * D(kappa).

    Odd in kappa; reduces to kappa/4pi for a strict Ohmic bath.
    """
    kappa = np.asarray(kappa, dtype=float)
    out = kappa / (4.0 * math.pi) * drude_profile(kappa, bath.cutoff)
    return out if out.ndim else float(out)


def thermal_factor(kappa, beta: float):
    """coth(beta*kappa/2), series-stabilised for small |beta*kappa|.

    Odd in kappa with |value| >= 1. The origin is a genuine pole; evaluating
    at kappa == 0 raises. Use :func:`hadamard_free` where the regularised
    product kappa*coth is needed.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa == 0.0):
        raise ValueError("thermal_factor has a pole at kappa = 0")
    if math.isinf(beta):
        out = np.sign(kappa)
        return out if out.ndim else float(out)
    x = beta * kappa
    small = np.abs(x) < _COTH_SERIES_THRESHOLD
    xs = np.where(small, x, 1.0)  # placeholder avoids 0-division in the dead branch
    series = 2.0 / xs + xs / 6.0
    with np.errstate(over="ignore"):
        closed = 1.0 / np.tanh(np.where(small, 1.0, x) / 2.0)
    out = np.where(small, series, closed)
    return out if out.ndim else float(out)


def hadamard_free(kappa, bath: BathSpec):
    """Thermal noise spectrum of the free bath: coth(beta*kappa/2) * Im G_R0.

    Even in kappa, nonnegative, and finite at the origin where the
    kappa*coth product tends to 2/beta.
    """
    kappa = np.asarray(kappa, dtype=float)
    prof = drude_profile(kappa, bath.cutoff) / (4.0 * math.pi)
    if math.isinf(bath.beta):
        out = np.abs(kappa) * prof
        return out if out.ndim else float(out)
    x = bath.beta * kappa
    small = np.abs(x) < _COTH_SERIES_THRESHOLD
    # kappa * coth(beta*kappa/2) = 2/beta + beta*kappa^2/6 + O(x^4)
    series = 2.0 / bath.beta + bath.beta * kappa**2 / 6.0
    xsafe = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        closed = kappa / np.tanh(xsafe / 2.0)
    out = np.where(small, series, closed) * prof
    return out if out.ndim else float(out)
