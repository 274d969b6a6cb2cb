"""Reduced density-matrix propagation with site-local dephasing.

Two routes are provided and are expected to agree in the Markovian limit:

* :func:`propagate_lindblad` integrates the pure-dephasing master equation
  ``drho/dt = -i[H, rho] + sum_m G_m (P_m rho P_m - {P_m, rho}/2)``.
* :func:`propagate_stochastic` averages unitary evolutions under
  ``H + diag(dE(t))`` with Ornstein-Uhlenbeck site-energy noise.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from .model import ExcitonState, SystemHamiltonian
from .noise import DephasingModel, ou_integral_arma

#: Trajectories sharing one random stream in the stochastic propagator.
TRAJECTORY_BLOCK = 256


class PropagationError(RuntimeError):
    """Integrator failure."""


class UnderResolvedError(PropagationError):
    """The stochastic time step does not resolve the dynamics."""


@dataclass(frozen=True)
class PropagationResult:
    """Density-matrix snapshots on a uniform time grid."""

    times: np.ndarray
    states: np.ndarray
    basis: tuple
    method: str = "lindblad"
    n_traj: int = 0

    @property
    def site_populations(self) -> np.ndarray:
        return np.einsum("tii->ti", self.states).real

    def _sum(self, prefix: str) -> np.ndarray:
        idx = [i for i, b in enumerate(self.basis) if b.startswith(prefix)]
        return self.site_populations[:, idx].sum(axis=1)

    @property
    def donor_population(self) -> np.ndarray:
        return self._sum("D")

    @property
    def acceptor_population(self) -> np.ndarray:
        return self._sum("A")

    def state(self, i: int) -> ExcitonState:
        return ExcitonState(self.states[i], self.basis)

    def to_csv(self, path) -> None:
        pops = self.site_populations
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *self.basis])
            for t, row in zip(self.times, pops):
                writer.writerow([f"{t:.12g}", *(f"{p:.12g}" for p in row)])


def acceptor_population(result: PropagationResult) -> np.ndarray:
    """``P_A(t)``: summed acceptor-site populations at every output time."""
    return result.acceptor_population


def _check_inputs(h: SystemHamiltonian, rho0: ExcitonState, t_max: float, n_steps: int):
    if rho0.basis != h.basis:
        raise ValueError("initial state basis does not match the Hamiltonian")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")


def _centered(h: SystemHamiltonian) -> np.ndarray:
    # a global energy shift leaves rho(t) unchanged and keeps phases slow
    m = np.array(h.matrix)
    return m - np.trace(m).real / h.dim * np.eye(h.dim)


def dephasing_decay_matrix(rates: np.ndarray) -> np.ndarray:
    """Decay rate ``(G_j + G_k) / 2`` of each coherence ``rho_jk``; zero on the diagonal."""
    g = np.asarray(rates, dtype=float)
    d = 0.5 * (g[:, None] + g[None, :])
    np.fill_diagonal(d, 0.0)
    return d


def lindblad_superoperator(h: SystemHamiltonian, deph: DephasingModel) -> np.ndarray:
    """Liouvillian acting on row-major ``vec(rho)``."""
    m = _centered(h)
    eye = np.eye(h.dim)
    liou = -1j * (np.kron(m, eye) - np.kron(eye, m.T))
    liou -= np.diag(dephasing_decay_matrix(deph.site_rates).ravel())
    return liou


def propagate_lindblad(
    h: SystemHamiltonian,
    deph: DephasingModel,
    rho0: ExcitonState,
    t_max: float,
    n_steps: int = 1000,
    solver: str = "rk45",
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> PropagationResult:
    """Pure-dephasing Lindblad dynamics sampled at ``n_steps + 1`` uniform times.

    Parameters
    ----------
    solver : {"rk45", "expm"}
        ``rk45`` is the adaptive Dormand-Prince pair with dense output;
        ``expm`` applies the exact one-interval propagator ``exp(L dt)``
        repeatedly and serves as an independent check.
    rtol, atol : float
        Integrator tolerances.  Errors of a pure state show up directly as
        negative eigenvalues of the same size, so the defaults sit well below
        the 1e-8 positivity budget.
    """
    _check_inputs(h, rho0, t_max, n_steps)
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    if len(deph.site_rates) != h.dim:
        raise ValueError("one dephasing rate per basis state is required")
    n = h.dim
    times = np.linspace(0.0, t_max, n_steps + 1)
    y0 = np.array(rho0.rho, dtype=complex).ravel()
    if solver == "rk45":
        m = _centered(h)
        decay = dephasing_decay_matrix(deph.site_rates)

        def rhs(_t, y):
            rho = y.reshape(n, n)
            return (-1j * (m @ rho - rho @ m) - decay * rho).ravel()

        sol = integrate.solve_ivp(rhs, (0.0, t_max), y0, method="RK45", t_eval=times, rtol=rtol, atol=atol)
        if not sol.success:
            raise PropagationError(sol.message)
        states = sol.y.T.reshape(-1, n, n)
    elif solver == "expm":
        step = linalg.expm(lindblad_superoperator(h, deph) * (times[1] - times[0]))
        out = np.empty((len(times), n * n), dtype=complex)
        out[0] = y0
        for i in range(1, len(times)):
            out[i] = step @ out[i - 1]
        states = out.reshape(-1, n, n)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    states = 0.5 * (states + states.conj().transpose(0, 2, 1))
    return PropagationResult(times, states, h.basis, method="lindblad")


def default_stochastic_step(h: SystemHamiltonian, cutoffs: np.ndarray) -> float:
    """``min(0.05 / wc, 0.02 / ||H||)`` with ``H`` centered on its mean energy."""
    norm = np.linalg.norm(_centered(h), 2)
    candidates = [0.05 / np.max(cutoffs)]
    if norm > 0:
        candidates.append(0.02 / norm)
    return float(min(candidates))


def _initial_amplitudes(rho0: ExcitonState) -> np.ndarray:
    w, v = np.linalg.eigh(rho0.rho)
    keep = w > 1e-14
    return v[:, keep] * np.sqrt(w[keep])


def _block_sizes(n_traj: int) -> list[int]:
    return [min(TRAJECTORY_BLOCK, n_traj - s) for s in range(0, n_traj, TRAJECTORY_BLOCK)]


class _BlockNoise:
    """Standard normals for a run of consecutive blocks, one stream per block.

    Block ``i`` always draws from ``SeedSequence(master_seed, spawn_key=(i,))``
    in time-major order, so values depend neither on the chunk length nor on
    which worker owns the block.
    """

    def __init__(self, master_seed: int, n_sites: int, sizes: Sequence[int], first_block: int = 0):
        self.sizes = list(sizes)
        self.rngs = [
            np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(first_block + i,)))
            for i in range(len(self.sizes))
        ]
        self.n_sites = n_sites

    def draw(self, *shape: int) -> np.ndarray:
        """Normals of shape ``shape + (sites, trajectories)``."""
        parts = [g.standard_normal(shape + (self.n_sites, k)) for g, k in zip(self.rngs, self.sizes)]
        return np.concatenate(parts, axis=-1)


def _ou_integrals(noise: _BlockNoise, sigmas, cutoffs, dt, chunk):
    """Exact step integrals ``I_j`` of stationary OU noise, ``chunk`` steps at a time.

    Yields arrays of shape ``(chunk + 1, sites, traj)`` holding
    ``I_s, ..., I_{s+chunk}``; consecutive arrays overlap by one step so that
    neighbouring integrals are always available together.
    """
    a, s, theta, var = (np.asarray(c)[:, None] for c in ou_integral_arma(cutoffs, dt))
    sig = sigmas[:, None]
    start = noise.draw(2)
    z_prev = start[0]
    i_prev = s * start[0] + np.sqrt(np.maximum(var - s * s, 0.0)) * start[1]
    while True:
        z = noise.draw(chunk)
        out = np.empty((chunk + 1,) + z_prev.shape)
        out[0] = i_prev
        out[1:] = z
        out[2:] += theta * z[:-1]
        out[1] += theta * z_prev
        out[1:] *= s
        for i in range(1, chunk + 1):
            out[i] += a * out[i - 1]
        z_prev = z[-1]
        i_prev = out[-1].copy()
        out *= sig
        yield out


def _phases(angles):
    out = np.empty(angles.shape, dtype=complex)
    np.cos(angles, out=out.real)
    np.sin(angles, out=out.imag)
    return out


def _run_ensemble(u0, psi0, sigmas, cutoffs, dt, sub, n_out, noise: _BlockNoise):
    """Propagate the trajectories owned by ``noise``; summed density matrices at output times.

    The half-step phases of neighbouring steps are merged, so one diagonal
    phase and one matrix product are applied per step, and phases are taken
    relative to the first site because a per-trajectory global phase leaves
    the density matrix unchanged.  The trailing half phase is added back only
    when a snapshot is taken.
    """
    n, r = psi0.shape
    n_traj = sum(noise.sizes)
    total = sub * (n_out - 1)
    chunk = max(1, min(total, 2_000_000 // (n * n_traj)))
    stream = _ou_integrals(noise, sigmas, cutoffs, dt, chunk)
    # psi[site, component, trajectory]
    psi = np.ascontiguousarray(np.broadcast_to(psi0[:, :, None], (n, r, n_traj)), dtype=complex)
    work = np.empty_like(psi)
    acc = np.empty((n_out, n, n), dtype=complex)
    acc[0] = n_traj * (psi0 @ psi0.conj().T)
    pos = chunk
    for j in range(total):
        if pos == chunk:
            ints = next(stream)
            rel = ints[:, 1:] - ints[:, :1]
            rel *= -0.5
            if j == 0:
                psi[1:] *= _phases(rel[0])[:, None, :]
            merged = _phases(rel[:-1] + rel[1:])
            pos = 0
        np.matmul(u0, psi.reshape(n, -1), out=work.reshape(n, -1))
        psi, work = work, psi
        if (j + 1) % sub == 0:
            snap = psi.copy()
            snap[1:] *= _phases(rel[pos])[:, None, :]
            snap = snap.reshape(n, -1)
            acc[(j + 1) // sub] = snap @ snap.conj().T
        psi[1:] *= merged[pos][:, None, :]
        pos += 1
    return acc


def _ensemble_task(args):
    u0, psi0, sigmas, cutoffs, dt, sub, n_out, seed, sizes, first = args
    noise = _BlockNoise(seed, len(sigmas), sizes, first)
    return _run_ensemble(u0, psi0, sigmas, cutoffs, dt, sub, n_out, noise)


def propagate_stochastic(
    h: SystemHamiltonian,
    sigmas: Sequence[float],
    cutoffs,
    rho0: ExcitonState,
    t_max: float,
    n_steps: int,
    n_traj: int,
    master_seed: int,
    dt: Optional[float] = None,
    check_step: bool = True,
    step_tolerance: float = 1e-4,
    jobs: int = 1,
) -> PropagationResult:
    """Average of noisy unitary evolutions.

    Each trajectory evolves under ``H + diag(x(t))`` where every site carries an
    independent stationary OU process with amplitude ``sigmas[m]`` and cutoff
    ``cutoffs[m]``.  Over each step the noise is replaced by its exact step
    average, sampled jointly with the process itself, which is the first
    Magnus term of the noisy generator.  The step propagator is applied in
    symmetric split form ``exp(-i I/2) exp(-i H dt) exp(-i I/2)`` with ``I``
    the diagonal of step integrals, so every trajectory is exactly unitary.

    Parameters
    ----------
    sigmas, cutoffs : array_like
        OU standard deviation and inverse correlation time per basis state (MHz).
    t_max, n_steps : float, int
        Horizon and number of output intervals.
    n_traj, master_seed : int
        Ensemble size and the seed all noise is derived from.
    dt : float, optional
        Integration step; defaults to :func:`default_stochastic_step` and is
        rounded down so that it divides the output interval.
    check_step : bool
        Run a probe ensemble at ``dt`` and ``dt/2`` on shared noise paths and
        raise :class:`UnderResolvedError` if populations differ by more than
        ``step_tolerance``.
    jobs : int
        Worker processes.  Trajectories are grouped in blocks of
        :data:`TRAJECTORY_BLOCK` and block ``i`` draws its noise from
        ``SeedSequence(master_seed, spawn_key=(i,))``; partial sums are
        combined in block order, so results depend only on ``master_seed``,
        ``n_traj`` and ``jobs``.
    """
    _check_inputs(h, rho0, t_max, n_steps)
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    n = h.dim
    sigmas = np.asarray(sigmas, dtype=float)
    cutoffs = np.broadcast_to(np.asarray(cutoffs, dtype=float), (n,)).copy()
    if sigmas.shape != (n,) or np.any(sigmas < 0) or np.any(cutoffs <= 0):
        raise ValueError("need one non-negative sigma and positive cutoff per site")
    out_dt = t_max / n_steps
    if dt is None:
        dt = default_stochastic_step(h, cutoffs)
    sub = max(1, int(np.ceil(out_dt / dt - 1e-9)))
    dt = out_dt / sub
    if check_step:
        _check_resolution(h, sigmas, cutoffs, rho0, dt, sub, n_steps, master_seed, step_tolerance)
    u0 = linalg.expm(-1j * _centered(h) * dt)
    psi0 = _initial_amplitudes(rho0)
    sizes = _block_sizes(n_traj)
    groups = np.array_split(np.arange(len(sizes)), max(1, min(jobs, len(sizes))))
    tasks = [
        (u0, psi0, sigmas, cutoffs, dt, sub, n_steps + 1, master_seed, [sizes[i] for i in g], int(g[0]))
        for g in groups
    ]
    if len(tasks) == 1:
        parts = [_ensemble_task(tasks[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
            parts = list(pool.map(_ensemble_task, tasks))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    states = total / n_traj
    states = 0.5 * (states + states.conj().transpose(0, 2, 1))
    times = np.linspace(0.0, t_max, n_steps + 1)
    return PropagationResult(times, states, h.basis, method="stochastic", n_traj=n_traj)


def _check_resolution(h, sigmas, cutoffs, rho0, dt, sub, n_steps, master_seed, tol, n_probe=32):
    """Largest change of probe-averaged populations when the step is halved.

    Both runs see the same noise paths: the fine run uses the integrals over
    the two half steps and the coarse run their sum.
    """
    n = h.dim
    noise = _BlockNoise(master_seed, n, [n_probe], first_block=2**31)
    total = sub * n_steps
    chunk = max(1, min(2 * total, 2_000_000 // (n * n_probe)))
    chunk += chunk % 2
    stream = _ou_integrals(noise, sigmas, cutoffs, dt / 2, chunk)
    m = _centered(h)
    u_coarse = linalg.expm(-1j * m * dt)
    u_fine = linalg.expm(-0.5j * m * dt)
    psi0 = _initial_amplitudes(rho0)
    coarse = np.repeat(psi0[:, None, :], n_probe, axis=1)
    fine = coarse.copy()
    err = 0.0
    pos = chunk
    for k in range(total):
        if pos == chunk:
            ints = next(stream)[:-1]
            pos = 0
        halves = ints[pos], ints[pos + 1]
        pos += 2
        ph = np.exp(-0.5j * (halves[0] + halves[1]))[:, :, None]
        coarse = ph * (u_coarse @ (ph * coarse).reshape(n, -1)).reshape(coarse.shape)
        for part in halves:
            ph = np.exp(-0.5j * part)[:, :, None]
            fine = ph * (u_fine @ (ph * fine).reshape(n, -1)).reshape(fine.shape)
        if (k + 1) % sub == 0:
            diff = (np.abs(coarse) ** 2).sum(axis=2) - (np.abs(fine) ** 2).sum(axis=2)
            err = max(err, float(np.abs(diff.mean(axis=1)).max()))
    if err > tol:
        raise UnderResolvedError(f"halving the step changes populations by {err:.3g} > {tol:g}")
    return err


def ou_parameters(deph: DephasingModel, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """OU amplitudes and cutoffs reproducing the Lindblad rates in the narrowing limit."""
    rates = np.asarray(deph.site_rates, dtype=float)
    sig = np.sqrt(rates * cutoff / 2.0)
    return sig, np.full(rates.shape, float(cutoff))
