"""Phase-space and entanglement diagnostics.

Phase-space coordinates are complex amplitudes alpha = x + i y with the
vacuum Wigner function (2/pi) exp(-2|alpha|^2), so W integrates to one
over dx dy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import ndimage, optimize
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .fockspace import DensityMatrix, annihilation, creation, number

MIN_GRID_POINTS = 21
MOMENT_KEYS = ("n1", "n2", "a1", "a2", "a1a2", "a1dag_a2", "a1a1", "a2a2")


@dataclass
class WignerGrid:
    """Samples ``values[i, j] = W(re_axis[i] + 1j * im_axis[j])``."""

    re_axis: np.ndarray
    im_axis: np.ndarray
    values: np.ndarray
    source: str = ""

    @property
    def cell_area(self) -> float:
        return float((self.re_axis[1] - self.re_axis[0]) * (self.im_axis[1] - self.im_axis[0]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def at_origin(self) -> float:
        """W interpolated at alpha = 0."""
        f = RegularGridInterpolator((self.re_axis, self.im_axis), self.values)
        return float(f([0.0, 0.0])[0])


@dataclass
class PeakReport:
    peak_count: int
    peak_locations: list
    inversion_symmetric: bool
    is_ring: bool
    ring_radius: float | None


@dataclass
class EntanglementReport:
    v_plus: float
    v_minus: float
    v: float
    theta1: float
    theta2: float


def grid_axes(x_max: float = 3.0, n_points: int = 101) -> np.ndarray:
    if n_points < MIN_GRID_POINTS:
        raise ValueError(f"grid too coarse: need at least {MIN_GRID_POINTS} points per axis")
    return np.linspace(-x_max, x_max, n_points)


def default_extent(max_classical_amplitude: float = 0.0) -> float:
    return max(3.0, 1.5 * max_classical_amplitude)


def wigner_terms(rho: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Complex Laguerre-series value sum_mn rho_mn W[|m><n|](alpha).

    The imaginary part is a round-off residue for Hermitian ``rho``.
    """
    rho = np.asarray(rho)
    dim = rho.shape[0]
    alpha = np.asarray(alpha, dtype=np.complex128)
    r2 = np.abs(alpha) ** 2
    gauss = (2 / np.pi) * np.exp(-2 * r2)
    x = 4 * r2
    w = np.zeros(alpha.shape, dtype=np.complex128)
    two_a = 2 * alpha
    for n in range(dim):
        for m in range(n, dim):
            k = m - n
            lag = eval_genlaguerre(n, k, x)
            coef = (-1) ** n * np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1)))
            # <n| D Pi D^dag |m> for m >= n; its transpose is the conjugate
            base = gauss * coef * lag * two_a ** k
            if k == 0:
                w += rho[n, m] * base
            else:
                w += rho[n, m] * base + rho[m, n] * np.conj(base)
    return w


def wigner(rho: DensityMatrix | np.ndarray, re_axis=None, im_axis=None,
           source: str = "", imag_tol: float = 1e-10) -> WignerGrid:
    """Single-mode Wigner function on a rectangular grid (Fock/Laguerre series)."""
    if isinstance(rho, DensityMatrix):
        if rho.kind != "single_mode":
            raise ValueError("wigner needs a single-mode density matrix")
        mat = rho.data
    else:
        mat = np.asarray(rho, dtype=np.complex128)
    re_axis = grid_axes() if re_axis is None else np.asarray(re_axis, dtype=float)
    im_axis = re_axis if im_axis is None else np.asarray(im_axis, dtype=float)
    if len(re_axis) < MIN_GRID_POINTS or len(im_axis) < MIN_GRID_POINTS:
        raise ValueError(f"grid too coarse: need at least {MIN_GRID_POINTS} points per axis")
    alpha = re_axis[:, None] + 1j * im_axis[None, :]
    w = wigner_terms(mat, alpha)
    scale = max(1.0, float(np.abs(w).max()))
    residue = float(np.abs(w.imag).max())
    if residue > imag_tol * scale:
        raise ValueError(f"Wigner function has imaginary residue {residue:.3g}; rho not Hermitian?")
    return WignerGrid(re_axis, im_axis, w.real, source)


def wigner_displaced_parity(rho: np.ndarray, alpha: complex, pad: int | None = None) -> float:
    """W(alpha) = (2/pi) Tr[rho D(alpha) Pi D(alpha)^dag], D from a matrix exponential.

    D is exponentiated in a space ``pad`` levels larger than rho so that
    its low rows are free of truncation error; by default the padding
    grows with |alpha|.
    """
    rho = np.asarray(rho)
    dim = rho.shape[0]
    if pad is None:
        r = abs(alpha)
        pad = int(60 + r * r + 10 * r)
    big = dim + pad
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    d = expm(alpha * a.conj().T - np.conj(alpha) * a)[:dim, :]
    parity = (-1.0) ** np.arange(big)
    op = (d * parity) @ d.conj().T
    return float(np.real(np.sum(rho * op.T)) * 2 / np.pi)


def peak_analysis(w: WignerGrid, rel_height: float = 0.1, min_sep: int = 3,
                  n_angles: int = 90) -> PeakReport:
    """Count phase-space peaks and test for a ring-shaped distribution."""
    vals = w.values
    wmax = float(vals.max())
    is_max = vals == ndimage.maximum_filter(vals, size=3, mode="constant", cval=-np.inf)
    cand = np.argwhere(is_max & (vals >= rel_height * wmax))
    order = np.argsort(-vals[cand[:, 0], cand[:, 1]], kind="stable")
    kept = []
    for idx in cand[order]:
        if all(np.max(np.abs(idx - k)) >= min_sep for k in kept):
            kept.append(idx)
    locs = [complex(w.re_axis[i], w.im_axis[j]) for i, j in kept]

    dx = w.re_axis[1] - w.re_axis[0]
    dy = w.im_axis[1] - w.im_axis[0]

    def has_partner(z):
        return any(abs(q.real + z.real) <= dx * (1 + 1e-9)
                   and abs(q.imag + z.imag) <= dy * (1 + 1e-9) for q in locs)

    symmetric = bool(locs) and all(has_partner(z) for z in locs)

    # radial maximum of W along rays from the origin
    interp = RegularGridInterpolator((w.re_axis, w.im_axis), vals,
                                     bounds_error=False, fill_value=0.0)
    r_max = min(abs(w.re_axis[0]), abs(w.re_axis[-1]), abs(w.im_axis[0]), abs(w.im_axis[-1]))
    radii = np.linspace(0, r_max, 4 * len(w.re_axis))
    theta = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    pts = np.stack([np.outer(np.cos(theta), radii), np.outer(np.sin(theta), radii)], axis=-1)
    rays = interp(pts)
    profile = rays.max(axis=1)
    ring = bool(profile.min() > 0.5 * profile.max() and w.at_origin() < 0.5 * wmax)
    radius = float(np.mean(radii[rays.argmax(axis=1)])) if ring else None
    return PeakReport(len(locs), locs, symmetric, ring, radius)


def moments_from_density(rho: DensityMatrix) -> dict:
    """First and second moments needed by :func:`entanglement_variance`."""
    if rho.kind != "two_mode":
        raise ValueError("entanglement needs a two-mode density matrix")
    sp = rho.space
    a1, a2 = annihilation(sp, 1), annihilation(sp, 2)
    ops = {
        "n1": number(sp, 1), "n2": number(sp, 2), "a1": a1, "a2": a2,
        "a1a2": a1 @ a2, "a1dag_a2": creation(sp, 1) @ a2,
        "a1a1": a1 @ a1, "a2a2": a2 @ a2,
    }
    r = rho.data
    return {k: complex(np.sum(r * op.T)) for k, op in ops.items()}


def _centered(m: Mapping):
    missing = [k for k in MOMENT_KEYS if k not in m]
    if missing:
        raise ValueError(f"missing moments: {', '.join(missing)}")
    a1, a2 = np.asarray(m["a1"]), np.asarray(m["a2"])
    n1 = np.real(m["n1"]) - np.abs(a1) ** 2
    n2 = np.real(m["n2"]) - np.abs(a2) ** 2
    c11 = np.asarray(m["a1a1"]) - a1 ** 2
    c22 = np.asarray(m["a2a2"]) - a2 ** 2
    c12 = np.asarray(m["a1a2"]) - a1 * a2
    # <a1 a2^dag> - <a1><a2>^*
    d12 = np.conj(np.asarray(m["a1dag_a2"])) - a1 * np.conj(a2)
    return n1, n2, c11, c22, c12, d12


def epr_variances(moments: Mapping, theta1, theta2):
    """(V+, V-) at quadrature angles (theta1, theta2); broadcasts over arrays.

    X_i(t) = (a_i e^{-it} + a_i^dag e^{it})/sqrt(2), Y_i(t) = X_i(t + pi/2),
    V- = Var(X1 - X2), V+ = Var(Y1 + Y2); both equal 1 for the vacuum.
    """
    n1, n2, c11, c22, c12, d12 = _centered(moments)
    t1 = np.asarray(theta1)
    t2 = np.asarray(theta2)
    sq1 = np.real(c11 * np.exp(-2j * t1))
    sq2 = np.real(c22 * np.exp(-2j * t2))
    sum_term = np.real(c12 * np.exp(-1j * (t1 + t2)))
    diff_term = np.real(d12 * np.exp(-1j * (t1 - t2)))
    v_minus = (1 + n1 + n2 + sq1 + sq2) - 2 * (sum_term + diff_term)
    v_plus = (1 + n1 + n2 - sq1 - sq2) + 2 * (-sum_term + diff_term)
    return v_plus, v_minus


def entanglement_variance(source: DensityMatrix | Mapping, optimize_angles: bool = True,
                          theta1: float = 0.0, theta2: float = 0.0,
                          n_grid: int = 64) -> EntanglementReport:
    """Inseparability variance V = (V+ + V-)/2, minimized over the angles by default.

    The minimization is a coarse ``n_grid`` x ``n_grid`` scan followed by a
    Nelder-Mead refinement from the best grid point.
    """
    moments = moments_from_density(source) if isinstance(source, DensityMatrix) else source
    if optimize_angles:
        g = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
        vp, vm = epr_variances(moments, g[:, None], g[None, :])
        i, j = np.unravel_index(np.argmin(vp + vm), vp.shape)

        def f(th):
            p, m = epr_variances(moments, th[0], th[1])
            return 0.5 * float(p + m)

        res = optimize.minimize(f, [g[i], g[j]], method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-13, "maxiter": 2000})
        theta1, theta2 = (float(t) % (2 * np.pi) for t in res.x)
    vp, vm = epr_variances(moments, theta1, theta2)
    vp, vm = float(vp), float(vm)
    return EntanglementReport(vp, vm, 0.5 * (vp + vm), theta1, theta2)


def optimal_variance(moments: Mapping):
    """Closed-form minimum over the angles: 1 + N1 + N2 - 2|C12|.

    Only the sum of the angles matters for V; this is used as an
    independent check of the numerical minimization.
    """
    n1, n2, _, _, c12, _ = _centered(moments)
    return 1 + n1 + n2 - 2 * np.abs(c12)


def ensemble_variance(samples: np.ndarray, optimize_angles: bool = True,
                      theta1: float = 0.0, theta2: float = 0.0):
    """V(t) and its jackknife standard error from per-trajectory moments.

    ``samples`` has shape (n_traj, n_times, 8) in ``MOMENT_KEYS`` order.
    Angles are optimized on the full ensemble at each time and held fixed
    for the delete-one resamples.
    """
    n = samples.shape[0]
    s = np.ascontiguousarray(np.moveaxis(samples, 0, -1))
    total = s.sum(axis=-1)
    mean = total / n
    n_times = samples.shape[1]
    v = np.empty(n_times)
    se = np.zeros(n_times)
    angles = np.empty((n_times, 2))
    for k in range(n_times):
        mom = dict(zip(MOMENT_KEYS, mean[k]))
        rep = entanglement_variance(mom, optimize_angles, theta1, theta2)
        v[k] = rep.v
        angles[k] = rep.theta1, rep.theta2
        if n > 1:
            loo = (total[k][:, None] - s[k]) / (n - 1)
            vp, vm = epr_variances(dict(zip(MOMENT_KEYS, loo)), rep.theta1, rep.theta2)
            vj = 0.5 * (vp + vm)
            se[k] = math.sqrt((n - 1) / n * np.sum((vj - vj.mean()) ** 2))
    return v, se, angles
