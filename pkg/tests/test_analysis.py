import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nopo_sim.analysis import (
    MOMENT_KEYS,
    WignerGrid,
    ensemble_variance,
    entanglement_variance,
    epr_variances,
    grid_axes,
    moments_from_density,
    optimal_variance,
    peak_analysis,
    wigner,
    wigner_displaced_parity,
    wigner_terms,
)
from nopo_sim.fockspace import (
    DensityMatrix,
    FockSpace,
    StateVector,
    coherent_amplitudes,
    annihilation,
    coherent_state,
    density_from_ensemble,
    partial_trace,
    random_density_matrix,
    vacuum,
)


def _pure(c):
    c = np.asarray(c, dtype=complex)
    return DensityMatrix(np.outer(c, c.conj()), "single_mode")


def test_vacuum_origin_value():
    w = wigner(_pure([1, 0, 0]), grid_axes(3, 61))
    assert w.at_origin() == pytest.approx(2 / np.pi, abs=1e-12)


def test_single_photon_is_negative_at_origin():
    w = wigner(_pure([0, 1, 0]), grid_axes(3, 61))
    assert w.at_origin() == pytest.approx(-2 / np.pi, abs=1e-12)


def test_coherent_state_is_displaced_gaussian():
    alpha = 0.8 - 0.4j
    rho = _pure(coherent_amplitudes(alpha, 30))
    ax = grid_axes(3, 61)
    w = wigner(rho, ax)
    z = ax[:, None] + 1j * ax[None, :]
    np.testing.assert_allclose(w.values, 2 / np.pi * np.exp(-2 * np.abs(z - alpha) ** 2), atol=1e-10)


def test_series_matches_displaced_parity_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        rho = random_density_matrix(9, rng)
        alpha = complex(*rng.uniform(-2, 2, 2))
        got = wigner_terms(rho, np.array(alpha)).real
        assert got == pytest.approx(wigner_displaced_parity(rho, alpha), abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wigner_normalized_and_real(seed):
    rho = DensityMatrix(random_density_matrix(6, np.random.default_rng(seed)), "single_mode")
    w = wigner(rho, grid_axes(5, 121))
    assert w.integral() == pytest.approx(1.0, abs=1e-4)


def test_wigner_rejects_two_mode_and_coarse_grid():
    rho2 = density_from_ensemble([vacuum(FockSpace(2, 2))])
    with pytest.raises(ValueError, match="single-mode"):
        wigner(rho2)
    with pytest.raises(ValueError, match="grid too coarse"):
        wigner(_pure([1, 0]), np.linspace(-1, 1, 11))
    with pytest.raises(ValueError, match="grid too coarse"):
        grid_axes(3, 5)


def test_wigner_detects_non_hermitian_input():
    with pytest.raises(ValueError, match="imaginary"):
        wigner(np.array([[0.5, 0.5j], [0.5j, 0.5]]))


def _grid_from(f, x_max=4.0, n=101):
    ax = grid_axes(x_max, n)
    z = ax[:, None] + 1j * ax[None, :]
    return WignerGrid(ax, ax, f(z))


def test_peaks_single_gaussian():
    rep = peak_analysis(_grid_from(lambda z: np.exp(-2 * np.abs(z) ** 2)))
    assert rep.peak_count == 1
    assert rep.peak_locations[0] == pytest.approx(0, abs=1e-12)
    assert rep.inversion_symmetric
    assert not rep.is_ring


def test_peaks_symmetric_pair():
    a = 1.5 + 0.6j
    rep = peak_analysis(_grid_from(
        lambda z: np.exp(-2 * np.abs(z - a) ** 2) + np.exp(-2 * np.abs(z + a) ** 2)))
    assert rep.peak_count == 2
    assert rep.inversion_symmetric
    assert not rep.is_ring
    assert sorted(abs(z - a) < 0.1 for z in rep.peak_locations) == [False, True]


def test_peaks_asymmetric_pair():
    rep = peak_analysis(_grid_from(
        lambda z: np.exp(-2 * np.abs(z - 1.5) ** 2) + np.exp(-2 * np.abs(z + 1j) ** 2)))
    assert rep.peak_count == 2
    assert not rep.inversion_symmetric


def test_ring_detection():
    rep = peak_analysis(_grid_from(lambda z: np.exp(-4 * (np.abs(z) - 2) ** 2)))
    assert rep.is_ring
    assert rep.ring_radius == pytest.approx(2.0, abs=0.05)


def test_small_bumps_are_ignored():
    rep = peak_analysis(_grid_from(
        lambda z: np.exp(-2 * np.abs(z) ** 2) + 0.05 * np.exp(-8 * np.abs(z - 2.5) ** 2)))
    assert rep.peak_count == 1


SP = FockSpace(25, 25)


def _tmsv(r, phase=0.0, n_max=25):
    sp = FockSpace(n_max, n_max)
    data = np.zeros(sp.dim, complex)
    t = math.tanh(r)
    for n in range(n_max + 1):
        data[sp.index(n, n)] = (t * np.exp(1j * phase)) ** n / math.cosh(r)
    return density_from_ensemble([StateVector(sp, data).normalize()])


def test_vacuum_variance_is_one():
    rep = entanglement_variance(density_from_ensemble([vacuum(FockSpace(3, 3))]))
    assert rep.v == pytest.approx(1.0, abs=1e-12)
    assert rep.v_plus == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("r", [0.1, 0.35, 0.6])
def test_two_mode_squeezed_vacuum(r):
    rep = entanglement_variance(_tmsv(r, phase=0.7))
    assert rep.v == pytest.approx(math.exp(-2 * r), abs=1e-7)
    assert rep.v_plus == pytest.approx(math.exp(-2 * r), abs=1e-6)
    assert rep.v_minus == pytest.approx(math.exp(-2 * r), abs=1e-6)


def test_fixed_angles_are_worse_than_optimized():
    rho = _tmsv(0.4, phase=1.3)
    fixed = entanglement_variance(rho, optimize_angles=False)
    assert fixed.v > entanglement_variance(rho).v + 0.1


def test_coherent_product_is_not_entangled():
    rho = density_from_ensemble([coherent_state(SP, 1.1 - 0.5j, 0.3j)])
    rep = entanglement_variance(rho)
    assert rep.v == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_variance_is_phase_rotation_invariant(seed, phi):
    sp = FockSpace(3, 3)
    rng = np.random.default_rng(seed)
    rho = random_density_matrix(sp.dim, rng)
    n1 = np.repeat(np.arange(4), 4)
    # exp(-i phi n1) rho exp(i phi n1)
    u = np.exp(-1j * phi * n1)
    rot = u[:, None] * rho * u.conj()[None, :]
    a = entanglement_variance(DensityMatrix(rho, "two_mode", sp)).v
    b = entanglement_variance(DensityMatrix(rot, "two_mode", sp)).v
    assert b == pytest.approx(a, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_optimizer_reaches_closed_form_minimum(seed):
    sp = FockSpace(3, 3)
    rho = DensityMatrix(random_density_matrix(sp.dim, np.random.default_rng(seed)), "two_mode", sp)
    mom = moments_from_density(rho)
    assert entanglement_variance(mom).v == pytest.approx(float(optimal_variance(mom)), abs=1e-8)


def test_variances_match_operator_definition():
    sp = FockSpace(4, 4)
    a1, a2 = annihilation(sp, 1), annihilation(sp, 2)
    t1, t2 = 0.4, -1.1

    def quad(a, t):
        return (a * np.exp(-1j * t) + a.conj().T * np.exp(1j * t)) / math.sqrt(2)

    def var(op):
        m = np.trace(rho.data @ op)
        return np.trace(rho.data @ op @ op) - m * m

    # the truncated commutator is not 1 at the top level, so compare on a
    # state with no population there
    psi = np.zeros(sp.dim, complex)
    rng = np.random.default_rng(9)
    for n1 in range(3):
        for n2 in range(3):
            psi[sp.index(n1, n2)] = complex(*rng.standard_normal(2))
    rho = density_from_ensemble([StateVector(sp, psi).normalize()])
    xm = quad(a1, t1) - quad(a2, t2)
    yp = quad(a1, t1 + np.pi / 2) + quad(a2, t2 + np.pi / 2)
    vp, vm = epr_variances(moments_from_density(rho), t1, t2)
    assert vm == pytest.approx(var(xm).real, abs=1e-12)
    assert vp == pytest.approx(var(yp).real, abs=1e-12)


def test_missing_moment_is_reported():
    with pytest.raises(ValueError, match="missing moments"):
        epr_variances({"n1": 0}, 0, 0)


def test_ensemble_variance_matches_density_route():
    sp = FockSpace(4, 4)
    rng = np.random.default_rng(3)
    states = [StateVector(sp, rng.standard_normal(sp.dim) + 1j * rng.standard_normal(sp.dim)).normalize()
              for _ in range(30)]
    samples = np.array([[list(moments_from_density(density_from_ensemble([s])).values())]
                        for s in states])
    v, se, _ = ensemble_variance(samples)
    assert v[0] == pytest.approx(entanglement_variance(density_from_ensemble(states)).v, abs=1e-8)
    assert se[0] > 0
    assert list(moments_from_density(density_from_ensemble(states[:1]))) == list(MOMENT_KEYS)


def test_jackknife_se_of_constant_samples_is_zero():
    mom = np.array([1.0, 1.0, 0, 0, 0.5, 0, 0, 0], complex)
    samples = np.tile(mom, (10, 2, 1))
    v, se, _ = ensemble_variance(samples)
    np.testing.assert_allclose(se, 0, atol=1e-12)
    assert v[0] == pytest.approx(2.0, abs=1e-9)


def test_reduced_state_of_tmsv_is_thermal():
    r = 0.5
    red = partial_trace(_tmsv(r), 1)
    nbar = math.sinh(r) ** 2
    w = wigner(red, grid_axes(4, 81))
    assert w.at_origin() == pytest.approx(2 / np.pi / (2 * nbar + 1), abs=1e-6)
