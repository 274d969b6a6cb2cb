"""Single-excitation donor/acceptor Hamiltonians and initial states.

Units
-----
Energies, couplings, disorders and reorganization energies are plain floats
in MHz.  They are used directly as angular frequencies in rad/us, so a
coupling ``V`` drives Rabi oscillations ``sin(V t)**2`` with ``t`` in us and
rates come out in 1/us without any factor of 2*pi.

Basis labels follow ``D1..DN`` for donors and ``A1..AM`` for acceptors.  Any
other label (for example a bus mode ``busD``) belongs to neither aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

HERMITIAN_RTOL = 1e-12
STATE_ATOL = 1e-10

__all__ = [
    "SystemSpec",
    "SystemHamiltonian",
    "ExcitonState",
    "build_hamiltonian",
    "eigenstates",
    "prepare_state",
    "participation_ratio",
    "table1_spec",
    "uniform_spec",
    "site_labels",
]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _matrix(a, shape, name) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must be {shape[0]}x{shape[1]}, got shape {arr.shape}")
    return _frozen(arr)


def site_labels(n_donors: int, n_acceptors: int) -> tuple[str, ...]:
    return tuple(f"D{j + 1}" for j in range(n_donors)) + tuple(
        f"A{k + 1}" for k in range(n_acceptors)
    )


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of a donor/acceptor system.

    Parameters
    ----------
    donor_energies, acceptor_energies : sequence of float
        Site energies in MHz.
    donor_couplings, acceptor_couplings : array_like
        Symmetric intra-aggregate coupling matrices with zero diagonal.
    cross_couplings : array_like
        ``(n_donors, n_acceptors)`` donor-acceptor couplings.
    donor_reorg, acceptor_reorg : float
        Reorganization energies of the site baths.
    static_disorder_donor, static_disorder_acceptor : float
        Standard deviation of Gaussian static disorder, applied only when
        :func:`build_hamiltonian` receives a seed.
    cutoff_frequency : float
        Bath cutoff frequency, used by the stochastic noise model.
    """

    donor_energies: np.ndarray
    acceptor_energies: np.ndarray
    donor_couplings: np.ndarray
    acceptor_couplings: np.ndarray
    cross_couplings: np.ndarray
    donor_reorg: float = 0.0
    acceptor_reorg: float = 0.0
    static_disorder_donor: float = 0.0
    static_disorder_acceptor: float = 0.0
    cutoff_frequency: float = 1000.0

    def __post_init__(self):
        ed = np.atleast_1d(_frozen(self.donor_energies))
        ea = np.atleast_1d(_frozen(self.acceptor_energies))
        nd, na = ed.size, ea.size
        if nd < 1 or na < 1:
            raise ValueError("need at least one donor and one acceptor")
        vd = _matrix(self.donor_couplings, (nd, nd), "donor_couplings")
        va = _matrix(self.acceptor_couplings, (na, na), "acceptor_couplings")
        vda = _matrix(self.cross_couplings, (nd, na), "cross_couplings")
        for name, m in (("donor_couplings", vd), ("acceptor_couplings", va)):
            if not np.allclose(m, m.T, rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.any(np.diag(m) != 0):
                raise ValueError(f"{name} must have zero diagonal")
        for name in ("donor_reorg", "acceptor_reorg", "static_disorder_donor", "static_disorder_acceptor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.cutoff_frequency <= 0:
            raise ValueError("cutoff_frequency must be positive")
        for name, value in (
            ("donor_energies", ed),
            ("acceptor_energies", ea),
            ("donor_couplings", vd),
            ("acceptor_couplings", va),
            ("cross_couplings", vda),
        ):
            object.__setattr__(self, name, value)
        for name in ("donor_reorg", "acceptor_reorg", "static_disorder_donor",
                     "static_disorder_acceptor", "cutoff_frequency"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def n_donors(self) -> int:
        return self.donor_energies.size

    @property
    def n_acceptors(self) -> int:
        return self.acceptor_energies.size

    def replace(self, **changes) -> "SystemSpec":
        data = self.to_dict()
        data.update(changes)
        return SystemSpec(**data)

    def to_dict(self) -> dict:
        return {
            "donor_energies": self.donor_energies.tolist(),
            "acceptor_energies": self.acceptor_energies.tolist(),
            "donor_couplings": self.donor_couplings.tolist(),
            "acceptor_couplings": self.acceptor_couplings.tolist(),
            "cross_couplings": self.cross_couplings.tolist(),
            "donor_reorg": self.donor_reorg,
            "acceptor_reorg": self.acceptor_reorg,
            "static_disorder_donor": self.static_disorder_donor,
            "static_disorder_acceptor": self.static_disorder_acceptor,
            "cutoff_frequency": self.cutoff_frequency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        return cls(**data)


def uniform_spec(
    n_donors: int,
    n_acceptors: int,
    donor_energy: float,
    acceptor_energy: float,
    donor_coupling: float,
    cross_coupling: float,
    acceptor_coupling: float = 0.0,
    **kwargs,
) -> SystemSpec:
    """All-to-all coupled aggregates with equal energies and couplings."""
    vd = donor_coupling * (np.ones((n_donors, n_donors)) - np.eye(n_donors))
    va = acceptor_coupling * (np.ones((n_acceptors, n_acceptors)) - np.eye(n_acceptors))
    return SystemSpec(
        donor_energies=[donor_energy] * n_donors,
        acceptor_energies=[acceptor_energy] * n_acceptors,
        donor_couplings=vd,
        acceptor_couplings=va,
        cross_couplings=np.full((n_donors, n_acceptors), float(cross_coupling)),
        **kwargs,
    )


def table1_spec(
    donor_coupling: float = -10.0,
    cross_coupling: float = 10.0,
    gap: float = 148.0,
    donor_detuning: float = 5.0,
    donor_reorg: float = 10.0,
    acceptor_reorg: float = 80.0,
    cutoff_frequency: float = 1000.0,
) -> SystemSpec:
    """Two donors and one acceptor with the sample cQED parameters.

    The donor detuning is realised deterministically (donor 2 sits
    ``donor_detuning`` above donor 1), as in the directly coupled circuit.
    The default negative donor coupling puts the bright state lowest.
    """
    return SystemSpec(
        donor_energies=[gap, gap + donor_detuning],
        acceptor_energies=[0.0],
        donor_couplings=[[0.0, donor_coupling], [donor_coupling, 0.0]],
        acceptor_couplings=[[0.0]],
        cross_couplings=[[cross_coupling], [cross_coupling]],
        donor_reorg=donor_reorg,
        acceptor_reorg=acceptor_reorg,
        cutoff_frequency=cutoff_frequency,
    )


@dataclass(frozen=True)
class SystemHamiltonian:
    """Hermitian single-excitation Hamiltonian with ordered basis labels."""

    matrix: np.ndarray
    basis: tuple

    def __post_init__(self):
        m = _frozen(self.matrix, complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("Hamiltonian must be a square matrix")
        basis = tuple(self.basis)
        if len(basis) != m.shape[0]:
            raise ValueError("basis length does not match matrix dimension")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.conj().T).max() > HERMITIAN_RTOL * scale:
            raise ValueError("Hamiltonian is not Hermitian")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def donor_indices(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.basis) if b.startswith("D")], dtype=int)

    @property
    def acceptor_indices(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.basis) if b.startswith("A")], dtype=int)

    def block(self, which: str) -> np.ndarray:
        if which == "full":
            return self.matrix
        if which not in ("donor", "acceptor"):
            raise ValueError(f"unknown block {which!r}")
        idx = self.donor_indices if which == "donor" else self.acceptor_indices
        return self.matrix[np.ix_(idx, idx)]

    def shifted(self, shift: float) -> "SystemHamiltonian":
        return SystemHamiltonian(self.matrix + shift * np.eye(self.dim), self.basis)


@dataclass(frozen=True)
class ExcitonState:
    """Density matrix over the single-excitation basis."""

    rho: np.ndarray
    basis: tuple

    def __post_init__(self):
        rho = _frozen(self.rho, complex)
        basis = tuple(self.basis)
        if rho.shape != (len(basis), len(basis)):
            raise ValueError("density matrix shape does not match basis")
        if np.abs(rho - rho.conj().T).max() > STATE_ATOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > STATE_ATOL:
            raise ValueError(f"density matrix trace {np.trace(rho).real!r} != 1")
        if np.linalg.eigvalsh(rho).min() < -STATE_ATOL:
            raise ValueError("density matrix is not positive semidefinite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "basis", basis)

    @property
    def populations(self) -> np.ndarray:
        return self.rho.diagonal().real.copy()

    @property
    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)


def build_hamiltonian(spec: SystemSpec, disorder_seed: Optional[int] = None) -> SystemHamiltonian:
    """Assemble the site-basis Hamiltonian of ``spec``.

    With ``disorder_seed`` set, every donor (acceptor) energy receives an
    independent Gaussian offset of standard deviation
    ``static_disorder_donor`` (``static_disorder_acceptor``).
    """
    nd, na = spec.n_donors, spec.n_acceptors
    ed = spec.donor_energies.copy()
    ea = spec.acceptor_energies.copy()
    if disorder_seed is not None:
        rng = np.random.default_rng(disorder_seed)
        ed = ed + spec.static_disorder_donor * rng.standard_normal(nd)
        ea = ea + spec.static_disorder_acceptor * rng.standard_normal(na)
    h = np.zeros((nd + na, nd + na))
    h[:nd, :nd] = spec.donor_couplings
    h[nd:, nd:] = spec.acceptor_couplings
    h[:nd, nd:] = spec.cross_couplings
    h[nd:, :nd] = spec.cross_couplings.T
    h[np.diag_indices(nd + na)] = np.concatenate([ed, ea])
    return SystemHamiltonian(h, site_labels(nd, na))


def _canonical_vectors(vals: np.ndarray, vecs: np.ndarray, tol: float) -> np.ndarray:
    """Fix the gauge of eigenvectors.

    Degenerate subspaces are re-spanned by Gram-Schmidt on the projected unit
    vectors taken in ascending site order; every vector is then signed so its
    first significant component is real and positive.
    """
    n = len(vals)
    out = vecs.copy()
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(vals[stop] - vals[start]) <= tol:
            stop += 1
        k = stop - start
        if k > 1:
            sub = vecs[:, start:stop]
            proj = sub @ sub.conj().T
            basis = []
            for j in range(n):
                v = proj[:, j].copy()
                for b in basis:
                    v -= (b.conj() @ v) * b
                norm = np.linalg.norm(v)
                if norm > 1e-8:
                    basis.append(v / norm)
                if len(basis) == k:
                    break
            out[:, start:stop] = np.array(basis).T
        start = stop
    for i in range(n):
        v = out[:, i]
        j = np.flatnonzero(np.abs(v) > 1e-10)[0]
        out[:, i] = v * (abs(v[j]) / v[j])
    return out


def eigenstates(h: SystemHamiltonian, block: str = "full") -> list[tuple[float, np.ndarray]]:
    """Eigenpairs of the full Hamiltonian or of its donor/acceptor block.

    Returns ``(energy, coefficients)`` pairs sorted by ascending energy.  For a
    block, the coefficient vectors are expressed in that block's site basis.
    """
    m = h.block(block)
    vals, vecs = np.linalg.eigh(m)
    tol = 1e-9 * max(1.0, np.abs(vals).max(initial=0.0))
    vecs = _canonical_vectors(vals, vecs, tol)
    if np.allclose(vecs.imag, 0.0, atol=1e-14):
        vecs = vecs.real
    return [(float(vals[i]), vecs[:, i].copy()) for i in range(len(vals))]


def _embed_donor(h: SystemHamiltonian, rho_d: np.ndarray) -> ExcitonState:
    rho = np.zeros((h.dim, h.dim), dtype=complex)
    idx = h.donor_indices
    rho[np.ix_(idx, idx)] = rho_d
    return ExcitonState(rho, h.basis)


def prepare_state(h: SystemHamiltonian, kind: str, value=None) -> ExcitonState:
    """Initial donor state.

    Parameters
    ----------
    h : SystemHamiltonian
    kind : {"localized", "mixture", "delocalized", "lowest_donor_eigenstate"}
    value :
        Donor index (0-based) for ``localized``, donor probabilities for
        ``mixture``, donor amplitudes for ``delocalized``; unused otherwise.
        ``mixture`` and ``delocalized`` default to equal weights.
    """
    nd = len(h.donor_indices)
    if kind == "localized":
        j = int(value)
        if not 0 <= j < nd:
            raise IndexError(f"donor index {j} out of range for {nd} donors")
        rho_d = np.zeros((nd, nd))
        rho_d[j, j] = 1.0
    elif kind == "mixture":
        p = np.full(nd, 1.0 / nd) if value is None else np.asarray(value, dtype=float)
        if p.shape != (nd,):
            raise ValueError(f"expected {nd} probabilities")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("probabilities must be non-negative and sum to 1")
        rho_d = np.diag(p)
    elif kind == "delocalized":
        c = np.full(nd, nd**-0.5) if value is None else np.asarray(value, dtype=complex)
        if c.shape != (nd,):
            raise ValueError(f"expected {nd} coefficients")
        if abs(np.vdot(c, c).real - 1.0) > 1e-10:
            raise ValueError("coefficients must be normalized")
        rho_d = np.outer(c, c.conj())
    elif kind == "lowest_donor_eigenstate":
        _, c = eigenstates(h, "donor")[0]
        rho_d = np.outer(c, np.conj(c))
    else:
        raise ValueError(f"unknown state kind {kind!r}")
    return _embed_donor(h, rho_d)


def participation_ratio(state: ExcitonState) -> float:
    """Inverse participation ratio over donor sites, ``1 / sum(p_j**2)``.

    Donor populations are renormalized to the donor block first, so the
    result lies in ``[1, N_D]``.
    """
    idx = [i for i, b in enumerate(state.basis) if b.startswith("D")]
    p = state.rho.diagonal().real[idx]
    total = p.sum()
    if total <= 1e-14:
        raise ValueError("state has no donor population")
    p = p / total
    return float(1.0 / np.sum(p**2))
