"""Quantum state diffusion for the pump-eliminated two-mode NOPO.

After adiabatic elimination of the pump the subharmonics evolve under

    H = D1 n1 + D2 n2 + chi (a1+ a2 + a1 a2+) + i eps (a1+ a2+ - a1 a2)

with damping channels sqrt(2 g1) a1, sqrt(2 g2) a2 and the two-photon
loss sqrt(2 lam) a1 a2 that carries the pump depletion. Its factorized
first moments reproduce the mean-field drift in :mod:`nopo_sim.semiclassical`.

Each step splits off the detunings (the diagonal of H) as two exact half
phases; in between, the deterministic drift is advanced by classical RK4
and the Wiener increment enters in Euler-Maruyama form. A plain Euler
drift amplifies the fast parametric oscillations and, after
renormalization, pumps population into the top Fock levels.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .fockspace import (
    DensityMatrix,
    FockSpace,
    StateVector,
    TruncationError,
    TruncationWarning,
    annihilation,
    density_from_ensemble,
    partial_trace,
)
from .model import SystemParams

RECORD_NAMES = ("n1", "n2", "a1", "a2", "a1a2", "a1dag_a2", "a1a1", "a2a2")
NORM_FLOOR = 1e-8
BATCH_SIZE = 32
NOISE_BLOCK = 1024
MAX_FAILED_FRACTION = 0.01

_MASK64 = (1 << 64) - 1


class NormCollapseError(RuntimeError):
    pass


@dataclass
class EffectiveModel:
    hamiltonian: np.ndarray
    lindblads: list
    space: FockSpace
    params: SystemParams | None = None
    # set by effective_model(); enables the compiled stencil kernel
    structured: bool = False

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=np.complex128)
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-10:
            raise ValueError("Hamiltonian is not Hermitian")
        self.hamiltonian = h
        self.lindblads = [np.asarray(L, dtype=np.complex128) for L in self.lindblads]
        self._diag = np.real(np.diag(h)).copy()
        self._offdiag = h - np.diag(np.diag(h))
        self._ldl = sum((L.conj().T @ L for L in self.lindblads),
                        np.zeros_like(h))


def effective_model(params: SystemParams, space: FockSpace) -> EffectiveModel:
    p = params
    a1 = annihilation(space, 1)
    a2 = annihilation(space, 2)
    a1d, a2d = a1.conj().T, a2.conj().T
    h = (p.delta1 * a1d @ a1 + p.delta2 * a2d @ a2
         + p.chi * (a1d @ a2 + a1 @ a2d)
         + 1j * p.epsilon * (a1d @ a2d - a1 @ a2))
    h = 0.5 * (h + h.conj().T)
    lindblads = [math.sqrt(2 * p.gamma1) * a1,
                 math.sqrt(2 * p.gamma2) * a2,
                 math.sqrt(2 * p.lam) * (a1 @ a2)]
    return EffectiveModel(h, lindblads, space, params, structured=True)


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float = 5e-4
    t_end: float = 10.0
    record_stride: int = 100
    seed: int = 0
    snapshot_times: tuple = ()
    strict: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not self.t_end >= self.dt:
            raise ValueError("t_end must be at least dt")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "snapshot_times",
                           tuple(float(t) for t in self.snapshot_times))
        for t in self.snapshot_times:
            if not 0 <= t <= self.t_end:
                raise ValueError(f"snapshot time {t} outside [0, t_end]")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def record_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.record_stride)

    def snapshot_steps(self) -> list[int]:
        return [min(int(round(t / self.dt)), self.n_steps) for t in self.snapshot_times]


@dataclass
class TrajectoryRecord:
    """Expectation values along one trajectory.

    ``values[k, c]`` holds expectation ``RECORD_NAMES[c]`` at ``times[k]``.
    """

    times: np.ndarray
    values: np.ndarray
    snapshots: dict = field(default_factory=dict)
    max_top_population: float = 0.0
    seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        col = self.values[:, _column(name)]
        return col.real if name in ("n1", "n2") else col


@dataclass
class EnsembleStats:
    """Ensemble means and standard errors of the recorded expectations.

    The standard error of a complex column is stored as a complex number
    whose real and imaginary parts are the errors of the real and imaginary
    parts. ``samples`` keeps the per-trajectory values (n_traj, times, 8).
    """

    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_traj: int
    samples: np.ndarray
    n_failed: int = 0
    snapshots: dict = field(default_factory=dict)
    max_top_population: float = 0.0
    seeds: tuple = ()

    def __getitem__(self, name: str) -> np.ndarray:
        col = self.mean[:, _column(name)]
        return col.real if name in ("n1", "n2") else col

    def stderr(self, name: str) -> np.ndarray:
        col = self.se[:, _column(name)]
        return col.real if name in ("n1", "n2") else col

    def reduced(self, t: float, keep: int = 1) -> DensityMatrix:
        return partial_trace(self.snapshots[t], keep)


def _column(name: str) -> int:
    try:
        return RECORD_NAMES.index(name)
    except ValueError:
        raise KeyError(f"unknown record {name!r}") from None


def splitmix64(x: int) -> int:
    """One splitmix64 output mix of a 64-bit word."""
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trajectory_seed(master_seed: int, index: int) -> int:
    """Seed of trajectory ``index``: the (index+1)-th splitmix64 output from ``master_seed``."""
    return splitmix64(master_seed + (index + 1) * 0x9E3779B97F4A7C15)


class _NoiseSource:
    """Per-trajectory complex Wiener increments drawn in fixed-size blocks.

    Each trajectory owns a PCG64 stream; blocks of NOISE_BLOCK steps are
    drawn in order, so the increments never depend on how the caller slices
    the time axis.
    """

    def __init__(self, seeds, n_lindblad, dt):
        self.rngs = [np.random.Generator(np.random.PCG64(s)) for s in seeds]
        self.m = n_lindblad
        self.scale = math.sqrt(dt / 2)
        self.buf = np.empty((len(seeds), 0, n_lindblad), dtype=np.complex128)
        self.pos = 0

    def _refill(self):
        blocks = []
        for rng in self.rngs:
            z = rng.standard_normal((NOISE_BLOCK, self.m, 2))
            blocks.append((z[..., 0] + 1j * z[..., 1]) * self.scale)
        self.buf = np.stack(blocks)
        self.pos = 0

    def take(self, k):
        parts = []
        while k > 0:
            if self.pos == self.buf.shape[1]:
                self._refill()
            n = min(k, self.buf.shape[1] - self.pos)
            parts.append(self.buf[:, self.pos:self.pos + n])
            self.pos += n
            k -= n
        return np.ascontiguousarray(np.concatenate(parts, axis=1))


def _drift(psi: np.ndarray, model: EffectiveModel) -> np.ndarray:
    nrm2 = np.vdot(psi, psi).real
    out = -1j * (model._offdiag @ psi) - 0.5 * (model._ldl @ psi)
    for L in model.lindblads:
        lpsi = L @ psi
        ell = np.vdot(psi, lpsi) / nrm2
        out += np.conj(ell) * lpsi - 0.5 * abs(ell) ** 2 * psi
    return out


def qsd_step(state: StateVector, model: EffectiveModel, dt: float,
             noise) -> StateVector:
    """One QSD step followed by renormalization.

    ``noise`` holds one complex Wiener increment per Lindblad operator
    (mean 0, E|dxi|^2 = dt, E dxi^2 = 0). To first order in dt the update is
    the standard increment

        -i H psi dt + sum_j (<L_j^dag> L_j - L_j^dag L_j / 2 - |<L_j>|^2 / 2) psi dt
        + sum_j (L_j - <L_j>) psi dxi_j.
    """
    psi = state.data
    if abs(np.vdot(psi, psi).real - 1) > 1e-10:
        raise ValueError("qsd_step needs a normalized state")
    noise = np.asarray(noise, dtype=np.complex128).reshape(-1)
    if noise.size != len(model.lindblads):
        raise ValueError("need one noise increment per Lindblad operator")
    half = np.exp(-0.5j * model._diag * dt)
    psi = psi * half
    new = psi.copy()
    for L, xi in zip(model.lindblads, noise):
        lpsi = L @ psi
        new += (lpsi - np.vdot(psi, lpsi) * psi) * xi
    k1 = _drift(psi, model)
    k2 = _drift(psi + 0.5 * dt * k1, model)
    k3 = _drift(psi + 0.5 * dt * k2, model)
    k4 = _drift(psi + dt * k3, model)
    new += (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    new *= half
    nrm = np.linalg.norm(new)
    if nrm < NORM_FLOOR:
        raise NormCollapseError(f"state norm collapsed to {nrm:.3g}")
    return StateVector(state.space, new / nrm)


def _run_batch(model: EffectiveModel, initial: StateVector, config: TrajectoryConfig,
               seeds: list[int]):
    """Evolve a batch of trajectories; returns (values, snapshots, top, status)."""
    space = model.space
    nb = len(seeds)
    rec_steps = config.record_steps()
    snap_steps = config.snapshot_steps()
    stops = sorted(set(rec_steps.tolist()) | set(snap_steps) | {0})
    values = np.empty((nb, len(rec_steps), len(RECORD_NAMES)), dtype=np.complex128)
    snaps = {s: np.empty((nb, space.dim), dtype=np.complex128) for s in snap_steps}
    top_max = np.zeros(nb)
    status = np.zeros(nb, dtype=np.int64)
    noise = _NoiseSource(seeds, len(model.lindblads), config.dt)
    psi = np.repeat(initial.data[None, :], nb, axis=0).reshape((nb,) + space.dims)
    psi = np.ascontiguousarray(psi)

    if model.structured:
        p = model.params
        pars = (math.sqrt(2 * p.gamma1), math.sqrt(2 * p.gamma2), math.sqrt(2 * p.lam),
                p.chi, p.epsilon)
        half_phase = np.exp(-0.5j * model._diag * config.dt).reshape(space.dims)

    rec_index = {s: k for k, s in enumerate(rec_steps.tolist())}
    rec_buf = np.empty((nb, len(RECORD_NAMES)), dtype=np.complex128)
    top_buf = np.empty(nb)
    step = 0
    for stop in stops:
        if stop > step:
            xi = noise.take(stop - step)
            if model.structured:
                _kernels.evolve_batch(psi, xi, pars, config.dt, half_phase, status, step)
            else:
                flat = psi.reshape(nb, -1)
                for b in range(nb):
                    if status[b]:
                        continue
                    sv = StateVector(space, flat[b])
                    try:
                        for s in range(stop - step):
                            sv = qsd_step(sv, model, config.dt, xi[b, s])
                    except NormCollapseError:
                        status[b] = step + s + 1
                        continue
                    flat[b] = sv.data
            step = stop
        if step in rec_index:
            _kernels.record_batch(psi, rec_buf, top_buf)
            values[:, rec_index[step]] = rec_buf
            np.maximum(top_max, top_buf, out=top_max)
        if step in snaps:
            snaps[step][:] = psi.reshape(nb, -1)
    return values, snaps, top_max, status


def _truncation_check(top: float, strict: bool):
    if top > 1e-6:
        msg = f"Fock truncation inadequate: top-level population reached {top:.3g}"
        if strict:
            raise TruncationError(msg)
        warnings.warn(msg, TruncationWarning, stacklevel=3)


def run_trajectory(model: EffectiveModel, initial: StateVector | None = None,
                   config: TrajectoryConfig | None = None, index: int = 0) -> TrajectoryRecord:
    """Single trajectory; uses the seed an ensemble would give trajectory ``index``."""
    config = config or TrajectoryConfig()
    if initial is None:
        initial = _vacuum(model.space)
    seed = trajectory_seed(config.seed, index)
    values, snaps, top, status = _run_batch(model, initial, config, [seed])
    if status[0]:
        raise NormCollapseError(
            f"state norm collapsed at t = {status[0] * config.dt:.6g}")
    _truncation_check(float(top[0]), config.strict)
    times = config.record_steps() * config.dt
    snapshots = {t: StateVector(model.space, snaps[s][0].copy())
                 for t, s in zip(config.snapshot_times, config.snapshot_steps())}
    return TrajectoryRecord(times, values[0], snapshots, float(top[0]), seed)


def _vacuum(space):
    psi = np.zeros(space.dim, dtype=np.complex128)
    psi[0] = 1.0
    return StateVector(space, psi)


def worker_count() -> int:
    """Worker threads from NOPO_SIM_THREADS (0 or unset: one per CPU)."""
    raw = os.environ.get("NOPO_SIM_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NOPO_SIM_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("NOPO_SIM_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _ordered_mean_se(samples: np.ndarray):
    """Mean and standard error over axis 0, summed pairwise in index order."""
    n = samples.shape[0]
    # trajectory axis last and contiguous -> numpy pairwise summation
    s = np.ascontiguousarray(np.moveaxis(samples, 0, -1))
    mean = s.sum(axis=-1) / n
    if n < 2:
        return mean, np.zeros_like(mean)
    dev = s - mean[..., None]
    var_re = (dev.real ** 2).sum(axis=-1) / (n - 1)
    var_im = (dev.imag ** 2).sum(axis=-1) / (n - 1)
    se = np.sqrt(var_re / n) + 1j * np.sqrt(var_im / n)
    return mean, se


def run_ensemble(model: EffectiveModel, initial: StateVector | None = None,
                 config: TrajectoryConfig | None = None, n_traj: int = 100,
                 workers: int | None = None, batch_size: int = BATCH_SIZE) -> EnsembleStats:
    """Average ``n_traj`` independent trajectories.

    Trajectories are cut into fixed batches of ``batch_size`` by index and
    the batches are shared among ``workers`` threads, so the result is
    bit-identical for any worker count. Density matrices are assembled at
    each snapshot time from the surviving trajectories.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    config = config or TrajectoryConfig()
    if initial is None:
        initial = _vacuum(model.space)
    workers = worker_count() if workers is None else max(1, int(workers))
    seeds = [trajectory_seed(config.seed, i) for i in range(n_traj)]
    batches = [seeds[i:i + batch_size] for i in range(0, n_traj, batch_size)]

    def job(batch):
        return _run_batch(model, initial, config, batch)

    if workers == 1 or len(batches) == 1:
        results = [job(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, batches))

    values = np.concatenate([r[0] for r in results])
    status = np.concatenate([r[3] for r in results])
    top = float(np.concatenate([r[2] for r in results]).max())
    ok = status == 0
    n_failed = int((~ok).sum())
    if n_failed > MAX_FAILED_FRACTION * n_traj:
        raise NormCollapseError(
            f"{n_failed} of {n_traj} trajectories failed (norm collapse)")
    _truncation_check(top, config.strict)
    samples = values[ok]
    mean, se = _ordered_mean_se(samples)
    snapshots = {}
    for t, s in zip(config.snapshot_times, config.snapshot_steps()):
        states = np.concatenate([r[1][s] for r in results])[ok]
        snapshots[t] = density_from_ensemble(states, model.space)
    times = config.record_steps() * config.dt
    return EnsembleStats(times, mean, se, int(ok.sum()), samples, n_failed,
                         snapshots, top, tuple(seeds))
