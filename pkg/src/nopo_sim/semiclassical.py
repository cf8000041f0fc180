"""Mean-field dynamics of the two subharmonic amplitudes.

The conjugate amplitudes are never integrated separately: beta_i = conj(alpha_i).
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .model import SystemParams


class IntegrationError(RuntimeError):
    """Raised when a trajectory leaves the finite numbers."""


@dataclass(frozen=True)
class ClassicalState:
    alpha1: complex
    alpha2: complex

    def __post_init__(self):
        a1, a2 = complex(self.alpha1), complex(self.alpha2)
        if not (np.isfinite(a1) and np.isfinite(a2)):
            raise ValueError("classical amplitudes must be finite")
        object.__setattr__(self, "alpha1", a1)
        object.__setattr__(self, "alpha2", a2)

    def swapped(self) -> "ClassicalState":
        return ClassicalState(self.alpha2, self.alpha1)


@dataclass(frozen=True)
class ClassicalTrajectory:
    """Sampled mean-field trajectory.

    ``alpha`` has shape (len(times), 2); column i holds alpha_{i+1}.
    """

    times: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.alpha.shape != (len(self.times), 2):
            raise ValueError("times and states must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> ClassicalState:
        return ClassicalState(self.alpha[i, 0], self.alpha[i, 1])

    @property
    def photon_numbers(self) -> np.ndarray:
        return np.abs(self.alpha) ** 2


@dataclass(frozen=True)
class PulsingReport:
    is_pulsing: bool
    period: float | None
    oscillation_amplitude: float
    mean_photon_1: float
    mean_photon_2: float
    # relative spread of the successive peak spacings used for ``period``
    period_rsd: float | None = None
    n_peaks: int = 0


@dataclass(frozen=True)
class StabilityReport:
    max_growth_rate: float
    unstable: bool


def _param_tuple(p: SystemParams):
    return (p.gamma1, p.gamma2, p.delta1, p.delta2, p.chi, p.epsilon, p.lam)


@numba.njit(cache=True)
def _drift(a1, a2, g1, g2, d1, d2, chi, eps, lam):
    pair = lam * a1 * a2
    da1 = -(g1 + 1j * d1) * a1 + (eps - pair) * np.conj(a2) - 1j * chi * a2
    da2 = -(g2 + 1j * d2) * a2 + (eps - pair) * np.conj(a1) - 1j * chi * a1
    return da1, da2


def drift(state: ClassicalState, params: SystemParams) -> ClassicalState:
    """Time derivative of (alpha1, alpha2)."""
    da1, da2 = _drift(state.alpha1, state.alpha2, *_param_tuple(params))
    return ClassicalState(da1, da2)


@numba.njit(cache=True)
def _rk4(a1, a2, pars, dt, n_steps, stride, out):
    g1, g2, d1, d2, chi, eps, lam = pars
    out[0, 0] = a1
    out[0, 1] = a2
    h2 = 0.5 * dt
    h6 = dt / 6.0
    k = 1
    for step in range(1, n_steps + 1):
        k1a, k1b = _drift(a1, a2, g1, g2, d1, d2, chi, eps, lam)
        k2a, k2b = _drift(a1 + h2 * k1a, a2 + h2 * k1b, g1, g2, d1, d2, chi, eps, lam)
        k3a, k3b = _drift(a1 + h2 * k2a, a2 + h2 * k2b, g1, g2, d1, d2, chi, eps, lam)
        k4a, k4b = _drift(a1 + dt * k3a, a2 + dt * k3b, g1, g2, d1, d2, chi, eps, lam)
        a1 = a1 + h6 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        a2 = a2 + h6 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        if not (np.isfinite(a1.real) and np.isfinite(a1.imag)
                and np.isfinite(a2.real) and np.isfinite(a2.imag)):
            return step
        if step % stride == 0:
            out[k, 0] = a1
            out[k, 1] = a2
            k += 1
    return -1


def integrate(initial: ClassicalState, params: SystemParams, dt: float = 1e-3,
              t_end: float = 50.0, stride: int = 1) -> ClassicalTrajectory:
    """Fixed-step RK4 integration of the mean-field equations.

    Every ``stride``-th step is recorded, starting with the initial state.
    Steps are counted as round(t_end / dt), so t_end should be a multiple of dt.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end >= dt:
        raise ValueError("t_end must be at least dt")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n_steps = int(round(t_end / dt))
    n_rec = n_steps // stride + 1
    out = np.empty((n_rec, 2), dtype=np.complex128)
    failed = _rk4(complex(initial.alpha1), complex(initial.alpha2),
                  _param_tuple(params), float(dt), n_steps, int(stride), out)
    if failed >= 0:
        raise IntegrationError(f"non-finite amplitude at t = {failed * dt:.6g}")
    times = np.arange(n_rec) * (stride * dt)
    return ClassicalTrajectory(times, out)


def _quadratic_peaks(t: np.ndarray, y: np.ndarray):
    """Strict interior local maxima refined by a parabola through 3 points."""
    mid = y[1:-1]
    idx = np.nonzero((mid > y[:-2]) & (mid >= y[2:]))[0] + 1
    ym, y0, yp = y[idx - 1], y[idx], y[idx + 1]
    denom = ym - 2.0 * y0 + yp
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(denom != 0, 0.5 * (ym - yp) / denom, 0.0)
    h = t[1] - t[0]
    return t[idx] + shift * h, y0 - 0.25 * (ym - yp) * shift


def classify_long_time(traj: ClassicalTrajectory, transient_fraction: float = 0.5,
                       rel_tol: float = 1e-3, abs_tol: float = 1e-6,
                       min_window: float = 20.0) -> PulsingReport:
    """Decide whether |alpha1|^2 settles or keeps oscillating.

    The first ``transient_fraction`` of the record is discarded. The signal
    counts as pulsing when its peak-to-trough swing exceeds both
    ``rel_tol * mean`` and ``abs_tol`` and the swing is not still decaying
    (second half of the window keeps at least half of the first half's swing).
    """
    t = traj.times
    start = int(len(t) * transient_fraction)
    t_win = t[start:]
    if len(t_win) < 3 or t_win[-1] - t_win[0] < min_window:
        raise ValueError(
            f"trajectory too short: need {min_window} time units after the transient")
    n = traj.photon_numbers[start:]
    n1, n2 = n[:, 0], n[:, 1]
    mean1, mean2 = float(n1.mean()), float(n2.mean())
    swing = float(n1.max() - n1.min())

    half = len(n1) // 2
    still_decaying = np.ptp(n1[half:]) < 0.5 * np.ptp(n1[:half])
    pulsing = swing > rel_tol * mean1 and swing > abs_tol and not still_decaying

    period = rsd = None
    n_peaks = 0
    if pulsing:
        peak_t, _ = _quadratic_peaks(t_win, n1)
        n_peaks = len(peak_t)
        if n_peaks < 3:
            pulsing = False
        else:
            spacings = np.diff(peak_t)
            period = float(spacings.mean())
            rsd = float(spacings.std() / period)
    return PulsingReport(bool(pulsing), period, swing if pulsing else swing,
                         mean1, mean2, rsd, n_peaks)


def linearization(params: SystemParams) -> np.ndarray:
    """4x4 Jacobian at the origin in the variables (a1, a2, a1*, a2*)."""
    p = params
    e, c = p.epsilon, p.chi
    return np.array([
        [-(p.gamma1 + 1j * p.delta1), -1j * c, 0, e],
        [-1j * c, -(p.gamma2 + 1j * p.delta2), e, 0],
        [0, e, -(p.gamma1 - 1j * p.delta1), 1j * c],
        [e, 0, 1j * c, -(p.gamma2 - 1j * p.delta2)],
    ], dtype=np.complex128)


def trivial_stability(params: SystemParams) -> StabilityReport:
    rate = float(np.linalg.eigvals(linearization(params)).real.max())
    return StabilityReport(rate, rate > 0)


def numerical_threshold(params: SystemParams, epsilon_range=(0.0, 50.0),
                        tol: float = 1e-9, max_iter: int = 200) -> float:
    """Pump value where the empty cavity first becomes linearly unstable.

    Bisection on epsilon; the growth rate must change sign over the range.
    """
    lo, hi = map(float, epsilon_range)

    def growth(eps):
        return trivial_stability(params.replace(epsilon=eps)).max_growth_rate

    g_lo, g_hi = growth(lo), growth(hi)
    if g_lo > 0 or g_hi < 0 or g_lo == g_hi:
        raise ValueError(
            f"no sign change of the growth rate over epsilon in [{lo}, {hi}]")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g = growth(mid)
        if abs(g) < tol or hi - lo < 4e-16 * max(1.0, abs(mid)):
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
