"""Truncated two-mode Fock space.

Basis ordering is mode-1-major: the state |n1, n2> sits at index
``n1 * (n_max2 + 1) + n2``. Operators are dense complex matrices.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TOP_POPULATION_TOL = 1e-6


class TruncationWarning(UserWarning):
    pass


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FockSpace:
    n_max1: int
    n_max2: int

    def __post_init__(self):
        if self.n_max1 < 1 or self.n_max2 < 1:
            raise ValueError("n_max must be >= 1 for both modes")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.n_max1 + 1, self.n_max2 + 1)

    @property
    def dim(self) -> int:
        return (self.n_max1 + 1) * (self.n_max2 + 1)

    def index(self, n1: int, n2: int) -> int:
        return n1 * (self.n_max2 + 1) + n2

    def n_max(self, mode: int) -> int:
        _check_mode(mode)
        return self.n_max1 if mode == 1 else self.n_max2


def _check_mode(mode) -> None:
    if mode not in (1, 2):
        raise ValueError(f"mode must be 1 or 2, got {mode!r}")


def destroy(n_max: int) -> np.ndarray:
    """Single-mode lowering operator on occupations 0..n_max."""
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(np.complex128)


def annihilation(space: FockSpace, mode: int) -> np.ndarray:
    _check_mode(mode)
    i1 = np.eye(space.n_max1 + 1)
    i2 = np.eye(space.n_max2 + 1)
    if mode == 1:
        return np.kron(destroy(space.n_max1), i2)
    return np.kron(i1, destroy(space.n_max2))


def creation(space: FockSpace, mode: int) -> np.ndarray:
    return annihilation(space, mode).conj().T


def number(space: FockSpace, mode: int) -> np.ndarray:
    a = annihilation(space, mode)
    return a.conj().T @ a


def identity(space: FockSpace) -> np.ndarray:
    return np.eye(space.dim, dtype=np.complex128)


@dataclass
class StateVector:
    space: FockSpace
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.shape != (self.space.dim,):
            raise ValueError(
                f"state has shape {self.data.shape}, space needs ({self.space.dim},)")

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def normalize(self) -> "StateVector":
        nrm = self.norm()
        if nrm == 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.data / nrm)

    def amplitudes(self) -> np.ndarray:
        """View as a (n_max1+1, n_max2+1) array indexed by [n1, n2]."""
        return self.data.reshape(self.space.dims)


@dataclass
class DensityMatrix:
    """Two-mode (``kind='two_mode'``) or reduced single-mode density matrix."""

    data: np.ndarray
    kind: str = "two_mode"
    space: FockSpace | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.kind not in ("two_mode", "single_mode"):
            raise ValueError(f"unknown density matrix kind {self.kind!r}")
        n = self.data.shape[0]
        if self.data.shape != (n, n):
            raise ValueError("density matrix must be square")
        if self.kind == "two_mode" and (self.space is None or self.space.dim != n):
            raise ValueError("two-mode density matrix needs a matching FockSpace")

    @property
    def n_max(self) -> int:
        return self.data.shape[0] - 1

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def purity(self) -> float:
        return float(np.real(np.trace(self.data @ self.data)))

    def check_invariants(self, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8) -> None:
        """Raise ``ValueError`` unless Hermitian, unit-trace and positive."""
        r = self.data
        if np.max(np.abs(r - r.conj().T)) > herm_tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(r) - 1) > trace_tol:
            raise ValueError(f"density matrix trace {np.trace(r).real:.3g} != 1")
        if np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() < -eig_tol:
            raise ValueError("density matrix has a negative eigenvalue")


def coherent_amplitudes(alpha: complex, n_max: int) -> np.ndarray:
    """Truncated expansion alpha^n exp(-|alpha|^2/2)/sqrt(n!), renormalized."""
    if alpha == 0:
        c = np.zeros(n_max + 1, dtype=np.complex128)
        c[0] = 1.0
        return c
    n = np.arange(n_max + 1)
    # log-space avoids overflow of alpha^n and n! for large n_max
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    log_mag = n * np.log(abs(alpha)) - 0.5 * abs(alpha) ** 2 - 0.5 * log_fact
    c = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    return c / np.linalg.norm(c)


def coherent_state(space: FockSpace, alpha1: complex, alpha2: complex) -> StateVector:
    for mode, a in ((1, alpha1), (2, alpha2)):
        r = abs(a)
        if r * r + 5 * r >= space.n_max(mode):
            raise ValueError(
                f"truncation inadequate for mode {mode}: |alpha|^2 + 5|alpha| = "
                f"{r * r + 5 * r:.3g} >= n_max = {space.n_max(mode)}")
    c1 = coherent_amplitudes(alpha1, space.n_max1)
    c2 = coherent_amplitudes(alpha2, space.n_max2)
    return StateVector(space, np.kron(c1, c2))


def fock_state(space: FockSpace, n1: int, n2: int) -> StateVector:
    psi = np.zeros(space.dim, dtype=np.complex128)
    psi[space.index(n1, n2)] = 1.0
    return StateVector(space, psi)


def vacuum(space: FockSpace) -> StateVector:
    return fock_state(space, 0, 0)


def expectation(state: StateVector | DensityMatrix, op: np.ndarray) -> complex:
    """<psi|A|psi> for a state vector, Tr(rho A) for a density matrix."""
    op = np.asarray(op)
    if isinstance(state, StateVector):
        psi = state.data
        if op.shape != (psi.size, psi.size):
            raise ValueError(f"operator shape {op.shape} does not match dim {psi.size}")
        return complex(np.vdot(psi, op @ psi))
    rho = state.data
    if op.shape != rho.shape:
        raise ValueError(f"operator shape {op.shape} does not match {rho.shape}")
    # Tr(rho A) without forming the product
    return complex(np.sum(rho * op.T))


def density_from_ensemble(states: Sequence[StateVector] | np.ndarray,
                          space: FockSpace | None = None) -> DensityMatrix:
    """rho = (1/N) sum_i |psi_i><psi_i|.

    Accepts a list of :class:`StateVector` or an (N, dim) array together
    with ``space``.
    """
    if isinstance(states, np.ndarray):
        if space is None:
            raise ValueError("an array of states needs its FockSpace")
        mat = np.asarray(states, dtype=np.complex128)
    else:
        states = list(states)
        if not states:
            raise ValueError("empty ensemble")
        space = states[0].space
        if any(s.space != space for s in states):
            raise ValueError("all states must share one FockSpace")
        mat = np.stack([s.data for s in states])
    if mat.shape[0] == 0:
        raise ValueError("empty ensemble")
    rho = mat.T @ mat.conj() / mat.shape[0]
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, "two_mode", space)


def partial_trace(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """Reduced density matrix of mode ``keep``."""
    _check_mode(keep)
    if rho.kind != "two_mode":
        raise ValueError("partial trace needs a two-mode density matrix")
    d1, d2 = rho.space.dims
    r = rho.data.reshape(d1, d2, d1, d2)
    red = np.einsum("ijkj->ik", r) if keep == 1 else np.einsum("ijil->jl", r)
    return DensityMatrix(red, "single_mode")


def top_populations(state: StateVector | np.ndarray, space: FockSpace | None = None,
                    levels: int = 2) -> tuple[float, float]:
    """Population in the highest ``levels`` Fock levels of each mode."""
    if isinstance(state, StateVector):
        space, psi = state.space, state.data
    else:
        psi = np.asarray(state)
    p = np.abs(psi.reshape(space.dims)) ** 2
    return float(p[-levels:, :].sum()), float(p[:, -levels:].sum())


def check_truncation(state: StateVector, strict: bool = False,
                     tol: float = TOP_POPULATION_TOL) -> float:
    """Warn (or raise when ``strict``) if the top Fock levels are populated.

    Returns the larger of the two top-level populations.
    """
    worst = max(top_populations(state))
    if worst > tol:
        msg = f"Fock truncation inadequate: top-level population {worst:.3g} > {tol:g}"
        if strict:
            raise TruncationError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=2)
    return worst


def random_density_matrix(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random full-rank (or given rank) density matrix of size n, for testing."""
    rank = n if rank is None else rank
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


__all__ = [
    "FockSpace", "StateVector", "DensityMatrix", "TruncationWarning", "TruncationError",
    "annihilation", "creation", "number", "identity", "destroy", "coherent_state",
    "coherent_amplitudes", "fock_state", "vacuum", "expectation", "density_from_ensemble",
    "partial_trace", "top_populations", "check_truncation", "random_density_matrix",
]
