"""Real-time relaxation of the chain: transient powers and approach to the
steady state.

Hybrid kernel scheme: the retarded propagator is strict Ohmic (local
friction, exact matrix-exponential propagation), while the bath noise
kernel carries a large finite Drude cutoff so its inverse transform
exists. The mismatch is second order in (mode frequency / cutoff) and is
recorded in the trace metadata.

The noise kernel is assembled from closed forms,

    H(tau) = [thermal part via csch^2] + [Drude vacuum part via scaled
             exponential integrals] + [small thermal-cutoff cross term],

verified against direct oscillatory quadrature. It diverges
logarithmically at tau -> 0 (the per-channel ultraviolet tail of an Ohmic
bath), so the convolution quadratures use exact kernel moments over the
first few lag cells (box/midpoint product rules) instead of point values;
beyond the singular band, midpoint sampling is second-order accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm
from scipy.signal import fftconvolve
from scipy.special import exp1, expi

from .baths import BathSpec
from .chain import SystemMatrices
from .errors import StepTooCoarse, UnsupportedMode
from .quadrature import integrate

__all__ = [
    "InitialState",
    "RelaxationTrace",
    "companion_matrix",
    "retarded_time",
    "hadamard_free_time",
    "transient_powers",
    "fit_decay_rate",
    "DEFAULT_CUTOFF_FACTOR",
]

DEFAULT_CUTOFF_FACTOR = 50.0  # noise cutoff = factor * max mode frequency
_ASYMPTOTIC_SWITCH = 34.0     # argument beyond which e^x E1(x) etc. use series


# ---------------------------------------------------------------------------
# propagator
# ---------------------------------------------------------------------------

def companion_matrix(sys: SystemMatrices) -> np.ndarray:
    """First-order form of X'' + 2 Gamma X' + Omega^2 X = 0."""
    n = sys.n
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -sys.omega2
    a[n:, n:] = -2.0 * sys.gamma
    return a


def retarded_time(t: float, sys: SystemMatrices) -> np.ndarray:
    """Retarded propagator G_R(t): zero at t = 0, slope I/m, strict Ohmic.

    Negative times are refused; causality makes the kernel vanish there by
    construction, and asking for it is almost always a sign error upstream.
    """
    if t < 0:
        raise ValueError("retarded propagator is causal; t must be >= 0")
    n = sys.n
    phi = expm(companion_matrix(sys) * t)
    return phi[:n, n:] / sys.mass


# ---------------------------------------------------------------------------
# noise kernel closed forms
# ---------------------------------------------------------------------------

def _scaled_e1(x: np.ndarray) -> np.ndarray:
    """e^x E1(x) for x > 0, stable for large arguments."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo = x < _ASYMPTOTIC_SWITCH
    xl = x[lo]
    out[lo] = np.exp(xl) * exp1(xl)
    xh = x[~lo]
    s = np.zeros_like(xh)
    term = 1.0 / xh
    for k in range(30):
        s += term
        term *= -(k + 1) / xh
    out[~lo] = s
    return out


def _scaled_ei(x: np.ndarray) -> np.ndarray:
    """e^-x Ei(x) for x > 0 (principal value), stable for large arguments."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo = x < _ASYMPTOTIC_SWITCH
    xl = x[lo]
    out[lo] = np.exp(-xl) * expi(xl)
    xh = x[~lo]
    s = np.zeros_like(xh)
    term = 1.0 / xh
    for k in range(30):
        s += term
        term *= (k + 1) / xh
    out[~lo] = s
    return out


def _cos_tail(x: np.ndarray) -> np.ndarray:
    """integral_0^inf k cos(k u)/(k^2 + 1) dk at u = x, via exponential integrals."""
    return 0.5 * (_scaled_e1(x) - _scaled_ei(x))


def _thermal_strict(tau: np.ndarray, beta: float) -> np.ndarray:
    """Strict-Ohmic kernel plus 1/(4 pi^2 tau^2); the power tails cancel here.

    Equals 1/(4 pi^2 tau^2) - csch^2(pi tau / beta)/(4 beta^2), evaluated by
    series near the origin to avoid catastrophic cancellation.
    """
    tau = np.asarray(tau, dtype=float)
    if math.isinf(beta):
        return np.zeros_like(tau)
    x = np.pi * tau / beta
    out = np.empty_like(x)
    small = x < 0.3
    xs = x[small]
    out[small] = 1.0 / 3.0 - xs**2 / 15.0 + 2.0 * xs**4 / 189.0 - xs**6 / 675.0
    xl = x[~small]
    with np.errstate(over="ignore"):
        sinh2 = np.sinh(np.minimum(xl, 350.0)) ** 2
    out[~small] = 1.0 / xl**2 - np.where(xl > 350.0, 0.0, 1.0 / sinh2)
    return out / (4.0 * beta**2)


def _delta_thermal_integrand(k: np.ndarray, beta: float, cutoff: float) -> np.ndarray:
    # n(k) k^3 / (cutoff^2 + k^2); thermal-cutoff cross term
    return k**3 / (cutoff**2 + k**2) / np.expm1(beta * k)


def _delta_thermal_point(tau: float, beta: float, cutoff: float) -> float:
    """Cross term by direct quadrature with panels split at the cosine zeros."""
    if math.isinf(beta):
        return 0.0
    kmax = 70.0 / beta
    points = []
    if tau > 0:
        zero_step = math.pi / tau
        nz = int(kmax / zero_step)
        if nz > 4000:  # very late lags: the term is far below everything else
            kmax = 4000 * zero_step
            nz = 4000
        points = [j * zero_step for j in range(1, nz + 1)]
    val, _, _ = integrate(
        lambda k: np.cos(k * tau) * _delta_thermal_integrand(k, beta, cutoff),
        1e-12, kmax, tol_abs=1e-14, tol_rel=1e-12, points=points, max_evals=400_000,
    )
    return -val / (2.0 * math.pi**2)


class _DeltaThermalGrid:
    """Cross term tabulated by an FFT cosine transform and splined in tau."""

    def __init__(self, beta: float, cutoff: float, tau_max: float):
        self.beta = beta
        if math.isinf(beta):
            self.spline = None
            return
        span = 1.06 * tau_max
        target = min(beta / 300.0, span / 4096.0)
        nfft = 1 << max(14, math.ceil(math.log2(span / target)))
        nfft = min(nfft, 1 << 23)
        dtau = span / (nfft // 2)
        dk = 2.0 * math.pi / (nfft * dtau)
        k = np.arange(nfft) * dk
        f = np.zeros(nfft)
        sup = int(min(70.0 / beta / dk, nfft - 1))
        kk = k[1:sup + 1]
        f[1:sup + 1] = _delta_thermal_integrand(kk, beta, cutoff)
        g = np.fft.rfft(f).real
        taus = np.arange(g.size) * dtau
        vals = -(dk / (2.0 * math.pi**2)) * g
        keep = taus <= span
        self.spline = CubicSpline(taus[keep], vals[keep])
        self.tau_max = span

    def __call__(self, tau):
        if self.spline is None:
            return np.zeros_like(np.asarray(tau, dtype=float))
        return self.spline(np.asarray(tau, dtype=float))


class _NoiseKernel:
    """Bath noise correlation H(tau) for tau > 0 at one (beta, cutoff)."""

    def __init__(self, beta: float, cutoff: float, tau_max: float = None):
        if not math.isfinite(cutoff):
            raise UnsupportedMode(
                "time-domain noise kernel needs a finite cutoff; the strict "
                "Ohmic kernel is a distribution at equal times"
            )
        self.beta = beta
        self.cutoff = cutoff
        self._grid = _DeltaThermalGrid(beta, cutoff, tau_max) if tau_max else None

    def _delta(self, tau):
        if self._grid is not None:
            return self._grid(tau)
        flat = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.array([_delta_thermal_point(t, self.beta, self.cutoff) for t in flat]).reshape(np.shape(tau))

    def __call__(self, tau):
        tau = np.abs(np.asarray(tau, dtype=float))
        if np.any(tau == 0.0):
            raise ValueError(
                "noise kernel diverges logarithmically at tau = 0; "
                "integrate over a cell instead of evaluating the point"
            )
        vac = (self.cutoff**2 / (4.0 * math.pi**2)) * _cos_tail(self.cutoff * tau)
        out = _thermal_strict(tau, self.beta) + vac + self._delta(tau)
        return out if out.ndim else float(out)


def hadamard_free_time(tau: float, bath: BathSpec):
    """Noise correlation of one bath at lag tau (finite cutoff required).

    Even in tau; decays exponentially at rate min(2 pi / beta, cutoff); has
    an integrable logarithmic singularity at tau = 0, where evaluation
    raises. Scalars or arrays accepted.
    """
    kernel = _NoiseKernel(bath.beta, bath.cutoff)
    return kernel(tau)


# ---------------------------------------------------------------------------
# banded kernel moments
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _panel_quad(f, edges: np.ndarray) -> float:
    a = edges[:-1]
    b = edges[1:]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    x = mid + half * _GL_X[None, :]
    v = np.asarray(f(x.ravel())).reshape(x.shape)
    return float(np.sum((v @ _GL_W) * half[:, 0]))


def _geometric_edges(a: float, b: float, levels: int = 44) -> np.ndarray:
    """Panels accumulating geometrically toward a; resolves ln(tau - a)."""
    pts = [b - (b - a) * 0.5**j for j in range(levels + 1)]
    return np.array([a + (b - a) * 1e-15] + sorted(pts))


def _band_moments(kernel: _NoiseKernel, dt: float, r0: int):
    """Exact kernel moments over the singular band.

    Returns (hat, cell0, cell1): ``hat[r]`` is the kernel averaged against
    the unit hat centred at lag r*dt (the box-basis quadratic-form weight),
    ``cell0[j]``/``cell1[j]`` the plain and first moments over cell j used
    by the cumulative noise-power integral.
    """
    hat = np.zeros(r0 + 1)
    cell0 = np.zeros(r0 + 1)
    cell1 = np.zeros(r0 + 1)
    for r in range(r0 + 1):
        if r == 0:
            edges = _geometric_edges(0.0, dt)
            hat[0] = 2.0 * _panel_quad(lambda t: kernel(t) * (1.0 - t / dt), edges) / dt
        else:
            lo, hi = (r - 1) * dt, (r + 1) * dt
            if r <= 4:
                left = _geometric_edges(lo, r * dt) if r > 1 else np.concatenate(
                    [_geometric_edges(0.0, dt)[:-1], [dt]])
                edges = np.unique(np.concatenate([left, np.linspace(r * dt, hi, 9)]))
            else:
                edges = np.linspace(lo, hi, 17)
            hat[r] = _panel_quad(lambda t: kernel(t) * (1.0 - np.abs(t / dt - r)), edges) / dt
    for j in range(r0 + 1):
        lo, hi, mid = j * dt, (j + 1) * dt, (j + 0.5) * dt
        edges = _geometric_edges(lo, hi) if j == 0 else np.linspace(lo, hi, 9)
        cell0[j] = _panel_quad(kernel, edges)
        cell1[j] = _panel_quad(lambda t: kernel(t) * (t - mid), edges)
    return hat, cell0, cell1


# ---------------------------------------------------------------------------
# initial state and trace containers
# ---------------------------------------------------------------------------

@dataclass
class InitialState:
    """Gaussian initial data of the oscillators in (x..., p...) ordering."""

    mean_x: np.ndarray
    mean_p: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean_x", np.asarray(self.mean_x, dtype=float))
        object.__setattr__(self, "mean_p", np.asarray(self.mean_p, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    def validate(self, n: int):
        if self.mean_x.shape != (n,) or self.mean_p.shape != (n,):
            raise ValueError(f"means must have shape ({n},)")
        if self.cov.shape != (2 * n, 2 * n):
            raise ValueError(f"covariance must have shape ({2*n}, {2*n})")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        scale = max(1.0, float(np.abs(self.cov).max()))
        if np.linalg.eigvalsh(self.cov).min() < -1e-12 * scale:
            raise ValueError("covariance must be positive semidefinite")
        sympl = np.zeros((2 * n, 2 * n))
        sympl[:n, n:] = np.eye(n)
        sympl[n:, :n] = -np.eye(n)
        heis = self.cov + 0.5j * sympl
        if np.linalg.eigvalsh(heis).min() < -1e-10 * scale:
            raise ValueError("covariance violates the uncertainty bound")

    @classmethod
    def ground_state(cls, sys: SystemMatrices) -> "InitialState":
        """Ground state of the decoupled oscillators at their renormalised
        frequencies: <x_i^2> = 1/(2 m w_i), <p_i^2> = m w_i / 2."""
        w = np.sqrt(np.diag(sys.omega2))
        n = sys.n
        cov = np.zeros((2 * n, 2 * n))
        cov[:n, :n] = np.diag(1.0 / (2.0 * sys.mass * w))
        cov[n:, n:] = np.diag(sys.mass * w / 2.0)
        return cls(mean_x=np.zeros(n), mean_p=np.zeros(n), cov=cov)

    def second_moment_xv(self, mass: float) -> np.ndarray:
        """Full second-moment matrix in (x..., xdot...) coordinates."""
        n = self.mean_x.size
        mu = np.concatenate([self.mean_x, self.mean_p])
        total = self.cov + np.outer(mu, mu)
        s = np.eye(2 * n)
        s[n:, n:] /= mass
        return s @ total @ s.T


@dataclass
class RelaxationTrace:
    """Transient powers and energies on the stored output grid."""

    times: np.ndarray
    p_xi_t: np.ndarray
    p_gamma_t: np.ndarray
    p_h_t: np.ndarray
    energy_t: np.ndarray
    coupling_energy_t: np.ndarray
    meta: dict = field(default_factory=dict)

    def total_energy(self) -> np.ndarray:
        return self.energy_t.sum(axis=1) + self.coupling_energy_t

    def late_time_current(self) -> float:
        """Heat current into oscillator 1 at the final stored time."""
        return float(self.p_h_t[-1, 0, 0])

    def iter_long_rows(self):
        """(time, label, value) rows for long-format serialisation."""
        n = self.p_xi_t.shape[1]
        for r, t in enumerate(self.times):
            for name, arr in (("p_xi", self.p_xi_t), ("p_gamma", self.p_gamma_t),
                              ("p_h", self.p_h_t)):
                for i in range(n):
                    for j in range(n):
                        yield t, f"{name}[{i + 1}][{j + 1}]", arr[r, i, j]
            for i in range(n):
                yield t, f"energy[{i + 1}]", self.energy_t[r, i]
            yield t, "coupling_energy", self.coupling_energy_t[r]


# ---------------------------------------------------------------------------
# transient evolution
# ---------------------------------------------------------------------------

def _toeplitz_apply(kernel_vec: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """W[j] = sum_l kernel[|j - l|] signal[l] for each column of signal."""
    n = signal.shape[0]
    full = np.concatenate([kernel_vec[n - 1:0:-1], kernel_vec[:n]])[::-1]
    cols = []
    for c in range(signal.shape[1]):
        if n < 600:
            cols.append(np.convolve(signal[:, c], full, mode="valid"))
        else:
            cols.append(fftconvolve(signal[:, c], full, mode="valid"))
    return np.stack(cols, axis=1)


def transient_powers(t_max: float, dt: float, sys: SystemMatrices, baths,
                     state: InitialState = None, stride: int = None,
                     cutoff_factor: float = DEFAULT_CUTOFF_FACTOR,
                     check_energy: bool = True) -> RelaxationTrace:
    """Evolve the chain from ``state`` and record powers and energies.

    The retarded propagator is strict Ohmic; each bath's noise kernel uses
    its own cutoff, or ``cutoff_factor * max(mode frequency)`` for baths
    declared without one. ``dt`` must resolve both the fastest mode and
    the noise cutoff: dt <= min(0.05/max_mode, 0.5/cutoff).
    """
    n = sys.n
    modes = sys.normal_modes()
    wmax = float(modes.max())
    w_osc = float(np.sqrt(np.diag(sys.omega2).max()))
    cutoffs = [b.cutoff if math.isfinite(b.cutoff) else cutoff_factor * w_osc for b in baths]
    dt_max = min(0.05 / wmax, 0.5 / max(cutoffs))
    if dt > dt_max * (1.0 + 1e-9):
        raise StepTooCoarse(
            f"dt={dt:g} too coarse for modes/cutoff; need dt <= {dt_max:g}",
            suggested_dt=dt_max,
        )
    if state is None:
        state = InitialState.ground_state(sys)
    state.validate(n)

    nt = int(round(t_max / dt))
    if nt < 8:
        raise ValueError("t_max must span at least a handful of steps")
    if stride is None:
        stride = max(1, nt // 400)
    out_idx = np.arange(0, nt + 1, stride)
    if out_idx[-1] != nt:
        out_idx = np.append(out_idx, nt)

    # --- lag tables at cell midpoints -------------------------------------
    a = companion_matrix(sys)
    step = expm(a * dt)
    z = expm(a * dt / 2.0) @ np.vstack([np.zeros((n, n)), np.eye(n) / sys.mass])
    g_mid = np.empty((nt, n, n))
    gd_mid = np.empty((nt, n, n))
    for j in range(nt):
        g_mid[j] = z[:n]
        gd_mid[j] = z[n:]
        z = step @ z
    gdd_mid = -2.0 * (sys.gamma @ gd_mid) - sys.omega2 @ g_mid  # from the EOM

    # --- per-bath kernels ---------------------------------------------------
    e2 = sys.coupling_diag**2
    active = [b_idx for b_idx in range(n) if e2[b_idx] > 0.0]
    r0 = int(math.ceil(10.0 / (min(cutoffs) * dt))) + 8 if active else 0
    r0 = min(r0, nt - 1)
    hat_k = {}
    cell0 = {}
    cell1 = {}
    for b_idx in active:
        kern = _NoiseKernel(baths[b_idx].beta, cutoffs[b_idx], tau_max=t_max + 2 * dt)
        hat_vec = np.zeros(nt)
        c0 = np.zeros(nt)
        c1 = np.zeros(r0 + 1)
        hat_band, c0_band, c1_band = _band_moments(kern, dt, r0)
        hat_vec[:r0 + 1] = hat_band
        c0[:r0 + 1] = c0_band
        c1[:] = c1_band
        if r0 + 1 < nt:
            lags = np.arange(r0 + 1, nt) * dt
            hat_vec[r0 + 1:] = kern(lags)
            c0[r0 + 1:] = dt * kern(lags + dt / 2.0)  # cell-midpoint values
        hat_k[b_idx] = hat_vec
        cell0[b_idx] = c0
        cell1[b_idx] = c1
    kernel_l1 = float(sum(e2[b] * np.abs(cell0[b]).sum() for b in active))

    # --- cumulative noise power on the fine grid ----------------------------
    # P_xi(t_m) = sum_{j<m} C [cell0_b[j] Gd(mid_j) + cell1_b[j] Gdd(mid_j)]^T C
    p_xi_fine = np.zeros((nt + 1, n, n))
    if active:
        incr = np.zeros((nt, n, n))
        for b_idx in active:
            incr[:, b_idx, :] += e2[b_idx] * cell0[b_idx][:, None] * gd_mid[:, :, b_idx]
            incr[:r0 + 1, b_idx, :] += e2[b_idx] * cell1[b_idx][:, None] * gdd_mid[:r0 + 1, :, b_idx]
        np.cumsum(incr, axis=0, out=incr)
        p_xi_fine[1:] = incr

    # --- homogeneous (initial-data) part ------------------------------------
    m0 = state.second_moment_xv(sys.mass)
    phi_out = {}
    phi = np.eye(2 * n)
    next_out = 0
    for j in range(nt + 1):
        if next_out < out_idx.size and j == out_idx[next_out]:
            phi_out[j] = phi.copy()
            next_out += 1
        if j < nt:
            phi = step @ phi

    # --- assemble outputs ----------------------------------------------------
    m_out = out_idx.size
    p_xi_t = np.empty((m_out, n, n))
    p_gamma_t = np.empty((m_out, n, n))
    s_xx_t = np.empty((m_out, n, n))
    s_vv_t = np.empty((m_out, n, n))
    for r, idx in enumerate(out_idx):
        s_xx = np.zeros((n, n))
        s_vv = np.zeros((n, n))
        for b_idx in active:
            if idx > 0:
                kern_vec = hat_k[b_idx][:idx]
                sig_v = gd_mid[:idx, :, b_idx]
                sig_x = g_mid[:idx, :, b_idx]
                wv = _toeplitz_apply(kern_vec, sig_v)
                wx = _toeplitz_apply(kern_vec, sig_x)
                s_vv += e2[b_idx] * dt * dt * sig_v.T @ wv
                s_xx += e2[b_idx] * dt * dt * sig_x.T @ wx
        hom = phi_out[idx] @ m0 @ phi_out[idx].T
        s_xx += hom[:n, :n]
        s_vv += hom[n:, n:]
        s_xx_t[r] = s_xx
        s_vv_t[r] = s_vv
        p_xi_t[r] = p_xi_fine[idx]
        p_gamma_t[r] = -2.0 * sys.mass * (sys.gamma @ s_vv)

    p_h_t = p_xi_t + p_gamma_t
    omega_diag = np.diag(sys.omega2)
    energy_t = 0.5 * sys.mass * (
        np.einsum("rii->ri", s_vv_t) + omega_diag[None, :] * np.einsum("rii->ri", s_xx_t)
    )
    coupling = np.triu(sys.omega2, 1)
    coupling_energy_t = sys.mass * np.einsum("ij,rij->r", coupling, s_xx_t)

    times = out_idx * dt
    meta = {
        "dt": dt,
        "stride": int(stride),
        "t_max": t_max,
        "noise_cutoffs": cutoffs,
        "band_cells": int(r0),
        "kernel_l1": kernel_l1,
        "hybrid_note": "strict-Ohmic friction with finite-cutoff noise; "
                       "systematic mismatch is O((mode/cutoff)^2)",
    }

    trace = RelaxationTrace(
        times=times,
        p_xi_t=p_xi_t,
        p_gamma_t=p_gamma_t,
        p_h_t=p_h_t,
        energy_t=energy_t,
        coupling_energy_t=coupling_energy_t,
        meta=meta,
    )
    if check_energy and m_out >= 7:
        _energy_check(trace, sys, dt)
    return trace


def _energy_check(trace: RelaxationTrace, sys: SystemMatrices, dt: float):
    """Compare d(total energy)/dt against the traced net power.

    The two agree for the continuum dynamics. On the grid the defect has
    two honest sources: the central-difference truncation of dE/dt, and
    the O(dt^2) drift of the product-quadrature bias (whose per-unit-time
    scale is bounded by dt^2 * mode^2 * sum_b e_b^2 * int|H_b|). Exceeding
    ten times their sum on most of the grid means the evolution is
    internally inconsistent.
    """
    t = trace.times
    e_tot = trace.total_energy()
    p_tr = np.einsum("rii->r", trace.p_h_t)
    steps = np.diff(t)
    if not np.allclose(steps, steps[0]):
        # the final stored point may close an irregular interval; check the
        # uniform prefix only
        uniform = np.isclose(steps, steps[0])
        last = int(np.argmin(uniform)) + 1 if not uniform.all() else t.size
        if last < 7:
            return
        t, e_tot, p_tr = t[:last], e_tot[:last], p_tr[:last]
    h = float(t[1] - t[0])
    de = (e_tot[2:] - e_tot[:-2]) / (2.0 * h)
    mid_p = p_tr[1:-1]
    defect = np.abs(de - mid_p)
    third = np.abs(np.diff(e_tot, 3)) / h**3
    third = np.concatenate([third[:1], third, third[-1:]])[: defect.size]
    wmax2 = float(np.linalg.eigvalsh(sys.omega2).max())
    bias_rate = dt**2 * wmax2 * trace.meta.get("kernel_l1", 0.0) / sys.mass**2
    estimate = (h**2 / 6.0) * third + bias_rate + 1e-7 * max(np.abs(p_tr).max(), 1e-12)
    # the kernel log makes E''' unbounded at t -> 0; skip the first few points
    skip = min(3, defect.size // 4)
    bad = defect[skip:] > 10.0 * estimate[skip:]
    trace.meta["energy_check"] = {
        "max_defect": float(defect.max()),
        "bias_allowance": float(bias_rate),
        "violating_fraction": float(bad.mean()) if bad.size else 0.0,
    }
    if bad.size and bad.mean() > 0.5:
        raise StepTooCoarse(
            f"energy bookkeeping defect exceeds 10x the discretisation estimate "
            f"at {100 * bad.mean():.0f}% of stored times; try dt = {dt / 2:g}",
            suggested_dt=dt / 2.0,
        )


def fit_decay_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Envelope decay rate of an oscillatory signal |values| ~ e^{-r t}.

    Fits log of block maxima over the window where the signal falls from
    90% to a floor above numerical noise; returns the rate r.
    """
    times = np.asarray(times, dtype=float)
    mag = np.abs(np.asarray(values, dtype=float))
    peak = mag.max()
    floor = max(peak * 1e-6, mag[-max(1, mag.size // 20):].mean() * 4.0)
    nblk = 24
    edges = np.linspace(times[0], times[-1], nblk + 1)
    bt, bv = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (times >= lo) & (times < hi)
        if not np.any(sel):
            continue
        i = np.argmax(mag[sel])
        bt.append(times[sel][i])
        bv.append(mag[sel][i])
    bt = np.array(bt)
    bv = np.array(bv)
    keep = (bv < 0.9 * peak) & (bv > floor)
    if keep.sum() < 3:
        keep = bv > 0
    coef = np.polyfit(bt[keep], np.log(bv[keep]), 1)
    return float(-coef[0])
