"""Compiled inner loops for the pump-eliminated NOPO model.

States are handled as arrays psi[b, n1, n2] over a batch of trajectories.
Each trajectory is processed by identical scalar code, so its result does
not depend on which batch it travels in.
"""
import numba
import numpy as np

# order of the recorded expectation values
N_RECORD = 8


@numba.njit(cache=True, nogil=True)
def _lowered_overlaps(P, m1, m2, sq1, sq2):
    """<a1>, <a2>, <a1 a2> of the padded (unnormalized) amplitudes P."""
    l1 = 0j
    l2 = 0j
    l3 = 0j
    for i in range(1, m1 + 1):
        for j in range(1, m2 + 1):
            cz = np.conj(P[i, j])
            l1 += cz * (sq1[i] * P[i + 1, j])
            l2 += cz * (sq2[j] * P[i, j + 1])
            l3 += cz * ((sq1[i] * sq2[j]) * P[i + 1, j + 1])
    return l1, l2, l3


@numba.njit(cache=True, nogil=True)
def _drift(P, out, m1, m2, sq1, sq2, c1, c2, c3, chi, eps, hldl):
    """Deterministic QSD drift of the padded state P (normalized on the fly).

    out = -i H_off P + sum_j (conj(l_j) L_j - L_j^dag L_j / 2 - |l_j|^2 / 2) P
    with l_j = <L_j> evaluated for P / |P|.
    """
    o1, o2, o3 = _lowered_overlaps(P, m1, m2, sq1, sq2)
    nrm2 = 0.0
    for i in range(1, m1 + 1):
        for j in range(1, m2 + 1):
            nrm2 += P[i, j].real ** 2 + P[i, j].imag ** 2
    l1 = c1 * o1 / nrm2
    l2 = c2 * o2 / nrm2
    l3 = c3 * o3 / nrm2
    shift = -0.5 * (abs(l1) ** 2 + abs(l2) ** 2 + abs(l3) ** 2)
    k1 = c1 * np.conj(l1)
    k2 = c2 * np.conj(l2)
    k3 = c3 * np.conj(l3) - eps
    cx = -1j * chi
    for i in range(1, m1 + 1):
        for j in range(1, m2 + 1):
            out[i, j] = ((shift - hldl[i, j]) * P[i, j]
                         + k1 * (sq1[i] * P[i + 1, j])
                         + k2 * (sq2[j] * P[i, j + 1])
                         + k3 * ((sq1[i] * sq2[j]) * P[i + 1, j + 1])
                         + cx * ((sq1[i - 1] * sq2[j]) * P[i - 1, j + 1]
                                 + (sq1[i] * sq2[j - 1]) * P[i + 1, j - 1])
                         + eps * ((sq1[i - 1] * sq2[j - 1]) * P[i - 1, j - 1]))


@numba.njit(cache=True, nogil=True)
def evolve_batch(psi, noise, pars, dt, half_phase, status, step0):
    """Advance every live trajectory by ``noise.shape[1]`` steps in place.

    pars = (c1, c2, c3, chi, eps) with c_j the Lindblad prefactors
    sqrt(2 g1), sqrt(2 g2), sqrt(2 lam). ``half_phase`` holds
    exp(-i (D1 n1 + D2 n2) dt / 2). ``status[b]`` stays 0 while trajectory
    b is healthy; on norm collapse it is set to the 1-based global step.

    One step: half detuning phase, then the deterministic drift by RK4 plus
    the Euler-Maruyama noise increment sum_j (L_j - l_j) psi dxi_j taken at
    the start of the step, the second half phase, and renormalization.
    """
    nb, m1, m2 = psi.shape
    n_steps = noise.shape[1]
    c1, c2, c3, chi, eps = pars
    # working copies carry a zero border so that P[i, j] = psi[i-1, j-1]
    # and every stencil read past the truncation returns 0
    sq1 = np.zeros(m1 + 2)
    sq2 = np.zeros(m2 + 2)
    for i in range(1, m1 + 2):
        sq1[i] = np.sqrt(i)
    for j in range(1, m2 + 2):
        sq2[j] = np.sqrt(j)
    hldl = np.zeros((m1 + 1, m2 + 1))
    for i in range(m1):
        for j in range(m2):
            hldl[i + 1, j + 1] = 0.5 * (c1 * c1 * i + c2 * c2 * j + c3 * c3 * i * j)
    shape = (m1 + 2, m2 + 2)
    P = np.zeros(shape, dtype=np.complex128)
    S = np.zeros(shape, dtype=np.complex128)
    K = np.zeros(shape, dtype=np.complex128)
    A = np.zeros(shape, dtype=np.complex128)
    h = 0.5 * dt
    for b in range(nb):
        if status[b] != 0:
            continue
        for i in range(m1):
            for j in range(m2):
                P[i + 1, j + 1] = psi[b, i, j]
        for s in range(n_steps):
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    P[i, j] *= half_phase[i - 1, j - 1]
            xi1 = noise[b, s, 0]
            xi2 = noise[b, s, 1]
            xi3 = noise[b, s, 2]
            o1, o2, o3 = _lowered_overlaps(P, m1, m2, sq1, sq2)
            z0 = -(c1 * o1 * xi1 + c2 * o2 * xi2 + c3 * o3 * xi3)
            w1 = c1 * xi1
            w2 = c2 * xi2
            w3 = c3 * xi3
            # A accumulates the new state: P + noise increment
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    A[i, j] = ((1.0 + z0) * P[i, j]
                               + w1 * (sq1[i] * P[i + 1, j])
                               + w2 * (sq2[j] * P[i, j + 1])
                               + w3 * ((sq1[i] * sq2[j]) * P[i + 1, j + 1]))
            # classical RK4 on the drift
            _drift(P, K, m1, m2, sq1, sq2, c1, c2, c3, chi, eps, hldl)
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    A[i, j] += (dt / 6.0) * K[i, j]
                    S[i, j] = P[i, j] + h * K[i, j]
            _drift(S, K, m1, m2, sq1, sq2, c1, c2, c3, chi, eps, hldl)
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    A[i, j] += (dt / 3.0) * K[i, j]
                    S[i, j] = P[i, j] + h * K[i, j]
            _drift(S, K, m1, m2, sq1, sq2, c1, c2, c3, chi, eps, hldl)
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    A[i, j] += (dt / 3.0) * K[i, j]
                    S[i, j] = P[i, j] + dt * K[i, j]
            _drift(S, K, m1, m2, sq1, sq2, c1, c2, c3, chi, eps, hldl)
            norm2 = 0.0
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    y = (A[i, j] + (dt / 6.0) * K[i, j]) * half_phase[i - 1, j - 1]
                    P[i, j] = y
                    norm2 += y.real * y.real + y.imag * y.imag
            if norm2 < 1e-16:
                status[b] = step0 + s + 1
                break
            inv = 1.0 / np.sqrt(norm2)
            for i in range(1, m1 + 1):
                for j in range(1, m2 + 1):
                    P[i, j] *= inv
        for i in range(m1):
            for j in range(m2):
                psi[b, i, j] = P[i + 1, j + 1]


@numba.njit(cache=True, nogil=True)
def record_batch(psi, out, top):
    """Expectations <n1>, <n2>, <a1>, <a2>, <a1 a2>, <a1+ a2>, <a1^2>, <a2^2>.

    ``top[b]`` receives the larger population of the two highest Fock
    levels of either mode.
    """
    nb, m1, m2 = psi.shape
    sq1 = np.sqrt(np.arange(m1 + 2).astype(np.float64))
    sq2 = np.sqrt(np.arange(m2 + 2).astype(np.float64))
    for b in range(nb):
        p = psi[b]
        n1 = 0.0
        n2 = 0.0
        a1 = 0j
        a2 = 0j
        a12 = 0j
        a1da2 = 0j
        a11 = 0j
        a22 = 0j
        top1 = 0.0
        top2 = 0.0
        for i in range(m1):
            for j in range(m2):
                cz = np.conj(p[i, j])
                pop = p[i, j].real ** 2 + p[i, j].imag ** 2
                n1 += i * pop
                n2 += j * pop
                if i >= m1 - 2:
                    top1 += pop
                if j >= m2 - 2:
                    top2 += pop
                if i + 1 < m1:
                    a1 += cz * sq1[i + 1] * p[i + 1, j]
                    if j + 1 < m2:
                        a12 += cz * sq1[i + 1] * sq2[j + 1] * p[i + 1, j + 1]
                if j + 1 < m2:
                    a2 += cz * sq2[j + 1] * p[i, j + 1]
                if i >= 1 and j + 1 < m2:
                    a1da2 += cz * sq1[i] * sq2[j + 1] * p[i - 1, j + 1]
                if i + 2 < m1:
                    a11 += cz * sq1[i + 1] * sq1[i + 2] * p[i + 2, j]
                if j + 2 < m2:
                    a22 += cz * sq2[j + 1] * sq2[j + 2] * p[i, j + 2]
        out[b, 0] = n1
        out[b, 1] = n2
        out[b, 2] = a1
        out[b, 3] = a2
        out[b, 4] = a12
        out[b, 5] = a1da2
        out[b, 6] = a11
        out[b, 7] = a22
        top[b] = max(top1, top2)
