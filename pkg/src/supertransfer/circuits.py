"""Superconducting-circuit realizations of the donor-acceptor model.

Circuit 1 couples transmons directly (``sigma^x sigma^x`` couplings); Circuit 2
couples the donors to a donor bus resonator and the acceptors to an acceptor
bus, with the two buses capacitively coupled.  In both cases only the
one-excitation sector matters.

Energy conventions: a transmon term ``E sigma^z`` with
``sigma^z = |e><e| - |g><g|`` gives the single-excitation state of qubit ``i``
the energy ``2 E_i - sum_j E_j``.  The global constant ``-sum_j E_j`` is
dropped, so qubit excitation energies are ``2 E_i`` and a bus photon costs
``omega``.  A coupling ``C sigma^x_i sigma^x_j`` contributes the hopping
element ``C`` (the Hermitian conjugate of a Hermitian term adds nothing).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Optional

import numpy as np

from .model import SystemHamiltonian, SystemSpec, build_hamiltonian, site_labels

#: Largest |C/Delta| accepted as dispersive.
DISPERSIVE_LIMIT = 0.2

_SZ = np.diag([-1.0, 1.0])  # basis (|g>, |e>)
_SX = np.array([[0.0, 1.0], [1.0, 0.0]])
_I2 = np.eye(2)


class DispersiveError(ValueError):
    """A qubit-bus detuning is too small for the perturbative reduction."""


class DispersiveWarning(UserWarning):
    """The full Circuit-2 Hamiltonian was built outside the dispersive regime."""


@dataclass(frozen=True)
class TransmonCalibration:
    """Flux tuning range and the small-signal current-to-energy chain.

    ``flux_range`` is the end of the monotone tuning branch in flux-quantum
    units; it is mapped onto ``[0, pi/2]`` in the cosine argument.
    """

    e_min: float
    e_max: float
    current_to_flux: float = 1.0
    energy_slope: float = 1.0
    flux_range: float = np.pi / 2

    def __post_init__(self):
        if not self.e_min < self.e_max:
            raise ValueError("need e_min < e_max")
        if self.flux_range <= 0:
            raise ValueError("flux_range must be positive")

    def contains(self, energy) -> bool:
        e = np.asarray(energy, dtype=float)
        return bool(np.all((e >= self.e_min) & (e <= self.e_max)))


def flux_to_energy(phi, cal: TransmonCalibration):
    """Transmon energy on the tuning branch.

    ``E(phi) = E_min + (E_max - E_min) sqrt|cos(pi/2 * phi / flux_range)|``,
    so ``E(0) = E_max`` and ``E(flux_range) = E_min``.
    """
    p = np.asarray(phi, dtype=float)
    tol = 1e-12 * cal.flux_range
    if np.any(p < -tol) or np.any(p > cal.flux_range + tol):
        raise ValueError(f"flux outside the calibrated branch [0, {cal.flux_range:g}]")
    x = 0.5 * np.pi * np.clip(p, 0.0, cal.flux_range) / cal.flux_range
    e = cal.e_min + (cal.e_max - cal.e_min) * np.sqrt(np.abs(np.cos(x)))
    return e if e.ndim else float(e)


def current_to_energy_shift(delta_i, cal: TransmonCalibration):
    """Small-signal energy shift ``(dE/dPhi)(dPhi/dI) dI`` in MHz for a current change in mA."""
    out = cal.energy_slope * cal.current_to_flux * np.asarray(delta_i, dtype=float)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Circuit1Spec:
    """Directly coupled transmons: donors, acceptors and their couplings (MHz)."""

    donor_energies: tuple
    acceptor_energies: tuple
    qubit_coupling: float
    cross_coupling: float
    acceptor_coupling: float = 0.0
    calibration: Optional[TransmonCalibration] = None

    def __post_init__(self):
        object.__setattr__(self, "donor_energies", tuple(float(e) for e in np.atleast_1d(self.donor_energies)))
        object.__setattr__(self, "acceptor_energies", tuple(float(e) for e in np.atleast_1d(self.acceptor_energies)))
        if not self.donor_energies or not self.acceptor_energies:
            raise ValueError("need at least one donor and one acceptor")
        if self.calibration is not None:
            energies = self.donor_energies + self.acceptor_energies
            if not self.calibration.contains(energies):
                raise ValueError(
                    f"qubit energies {energies} outside the tunable window "
                    f"[{self.calibration.e_min:g}, {self.calibration.e_max:g}]"
                )

    @classmethod
    def from_system(cls, spec: SystemSpec, calibration: Optional[TransmonCalibration] = None) -> "Circuit1Spec":
        """Circuit whose single-excitation block reproduces a uniform site model.

        Qubit energies are half the site energies; couplings carry over as is.
        """
        def one(m, name):
            vals = np.asarray(m)[~np.eye(len(m), dtype=bool)] if len(m) > 1 else np.array([0.0])
            if np.ptp(vals) > 1e-12:
                raise ValueError(f"{name} couplings must be uniform")
            return float(vals[0])

        cross = np.asarray(spec.cross_couplings)
        if np.ptp(cross) > 1e-12:
            raise ValueError("cross couplings must be uniform")
        return cls(
            donor_energies=tuple(np.asarray(spec.donor_energies) / 2.0),
            acceptor_energies=tuple(np.asarray(spec.acceptor_energies) / 2.0),
            qubit_coupling=one(spec.donor_couplings, "donor"),
            cross_coupling=float(cross.flat[0]),
            acceptor_coupling=one(spec.acceptor_couplings, "acceptor"),
            calibration=calibration,
        )


def _embed(op, site, n):
    return reduce(np.kron, [op if k == site else _I2 for k in range(n)])


def _one_excitation_indices(n):
    # qubit k is the k-th tensor factor (most significant first)
    return [1 << (n - 1 - k) for k in range(n)]


def circuit1_full_hamiltonian(spec: Circuit1Spec) -> np.ndarray:
    """The ``2**N`` dimensional qubit Hamiltonian ``sum E sigma^z + sum C sigma^x sigma^x``."""
    energies = list(spec.donor_energies) + list(spec.acceptor_energies)
    nd, n = len(spec.donor_energies), len(energies)
    h = sum(e * _embed(_SZ, k, n) for k, e in enumerate(energies))
    for i in range(n):
        for j in range(i + 1, n):
            if j < nd:
                c = spec.qubit_coupling
            elif i >= nd:
                c = spec.acceptor_coupling
            elif i < nd <= j:
                c = spec.cross_coupling
            else:
                c = 0.0
            if c:
                h = h + c * (_embed(_SX, i, n) @ _embed(_SX, j, n))
    return h


def circuit1_single_excitation(spec: Circuit1Spec) -> SystemHamiltonian:
    """One-excitation block of Circuit 1 in the site basis ``D1.., A1..``.

    Built from the full qubit Hamiltonian and projected; the ground-state
    constant is removed so the diagonal reads ``2 E_i``.
    """
    energies = list(spec.donor_energies) + list(spec.acceptor_energies)
    n = len(energies)
    full = circuit1_full_hamiltonian(spec)
    idx = _one_excitation_indices(n)
    block = full[np.ix_(idx, idx)] + sum(energies) * np.eye(n)
    return SystemHamiltonian(block, site_labels(len(spec.donor_energies), len(spec.acceptor_energies)))


@dataclass(frozen=True)
class Circuit2Spec:
    """Bus-coupled circuit.

    Donor qubits couple to a donor bus (frequency ``bus_donor``) with
    ``donor_bus_couplings``; acceptor qubits couple to an acceptor bus with
    ``acceptor_bus_couplings``; the buses couple with ``bus_coupling``.
    Qubit energies follow the ``sigma^z`` convention, so a qubit's detuning
    from its bus is ``2 E - omega``.
    """

    donor_energies: tuple
    acceptor_energies: tuple
    bus_donor: float
    bus_acceptor: float
    donor_bus_couplings: tuple
    acceptor_bus_couplings: tuple
    bus_coupling: float
    donor_reorg: float = 0.0
    acceptor_reorg: float = 0.0
    cutoff_frequency: float = 1000.0

    def __post_init__(self):
        for name in ("donor_energies", "acceptor_energies", "donor_bus_couplings", "acceptor_bus_couplings"):
            object.__setattr__(self, name, tuple(float(x) for x in np.atleast_1d(getattr(self, name))))
        if len(self.donor_energies) != len(self.donor_bus_couplings):
            raise ValueError("one bus coupling per donor is required")
        if len(self.acceptor_energies) != len(self.acceptor_bus_couplings):
            raise ValueError("one bus coupling per acceptor is required")
        if not self.donor_energies or not self.acceptor_energies:
            raise ValueError("need at least one donor and one acceptor")
        if self.donor_reorg < 0 or self.acceptor_reorg < 0 or self.cutoff_frequency <= 0:
            raise ValueError("reorganization energies must be >= 0 and the cutoff > 0")

    @property
    def donor_detunings(self) -> np.ndarray:
        return 2.0 * np.asarray(self.donor_energies) - self.bus_donor

    @property
    def acceptor_detunings(self) -> np.ndarray:
        return 2.0 * np.asarray(self.acceptor_energies) - self.bus_acceptor

    def coupling_ratios(self) -> np.ndarray:
        """``|C / Delta|`` for every qubit, donors first."""
        c = np.abs(np.concatenate([self.donor_bus_couplings, self.acceptor_bus_couplings]))
        d = np.abs(np.concatenate([self.donor_detunings, self.acceptor_detunings]))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(c == 0, 0.0, c / d)

    @property
    def is_dispersive(self) -> bool:
        return bool(np.all(self.coupling_ratios() <= DISPERSIVE_LIMIT + 1e-12))

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = list(v) if isinstance(v, tuple) else float(v)
        return out


def circuit2_labels(spec: Circuit2Spec) -> tuple:
    nd, na = len(spec.donor_energies), len(spec.acceptor_energies)
    return tuple(f"D{i + 1}" for i in range(nd)) + ("busD",) + tuple(f"A{k + 1}" for k in range(na)) + ("busA",)


def circuit2_full_single_excitation(spec: Circuit2Spec) -> SystemHamiltonian:
    """One-excitation Hamiltonian over ``(D1.., busD, A1.., busA)``.

    Qubit-bus exchange ``C (sigma^+ b + sigma^- b^dag)`` gives hopping ``C``;
    the bus-bus term keeps only ``b_D^dag b_A + b_D b_A^dag``.  Outside the
    dispersive regime a :class:`DispersiveWarning` is issued.
    """
    if not spec.is_dispersive:
        warnings.warn(
            f"coupling ratios {np.round(spec.coupling_ratios(), 4).tolist()} exceed {DISPERSIVE_LIMIT}",
            DispersiveWarning,
            stacklevel=2,
        )
    nd, na = len(spec.donor_energies), len(spec.acceptor_energies)
    n = nd + na + 2
    bus_d, bus_a = nd, n - 1
    h = np.zeros((n, n))
    for i, (e, c) in enumerate(zip(spec.donor_energies, spec.donor_bus_couplings)):
        h[i, i] = 2.0 * e
        h[i, bus_d] = h[bus_d, i] = c
    h[bus_d, bus_d] = spec.bus_donor
    for k, (e, c) in enumerate(zip(spec.acceptor_energies, spec.acceptor_bus_couplings)):
        a = nd + 1 + k
        h[a, a] = 2.0 * e
        h[a, bus_a] = h[bus_a, a] = c
    h[bus_a, bus_a] = spec.bus_acceptor
    h[bus_d, bus_a] = h[bus_a, bus_d] = spec.bus_coupling
    return SystemHamiltonian(h, circuit2_labels(spec))


def _effective(spec: Circuit2Spec) -> SystemSpec:
    cd, dd = np.asarray(spec.donor_bus_couplings), spec.donor_detunings
    ca, da = np.asarray(spec.acceptor_bus_couplings), spec.acceptor_detunings

    def pair(c, d):
        m = np.outer(c / (2 * d), c / (2 * d)) * (d[:, None] + d[None, :])
        np.fill_diagonal(m, 0.0)
        return m

    return SystemSpec(
        donor_energies=2.0 * np.asarray(spec.donor_energies) + cd**2 / dd,
        acceptor_energies=2.0 * np.asarray(spec.acceptor_energies) + ca**2 / da,
        donor_couplings=pair(cd, dd),
        acceptor_couplings=pair(ca, da),
        cross_couplings=spec.bus_coupling * np.outer(cd / dd, ca / da),
        donor_reorg=spec.donor_reorg,
        acceptor_reorg=spec.acceptor_reorg,
        cutoff_frequency=spec.cutoff_frequency,
    )


def frohlich_nakajima_reduce(spec: Circuit2Spec) -> SystemSpec:
    """Effective site model after eliminating both buses.

    With ``Delta_i = 2 E_i - omega`` for each qubit:

    * ``E~_i = 2 E_i + C_i**2 / Delta_i``
    * ``C~_ij = (C_i / 2 Delta_i)(C_j / 2 Delta_j)(Delta_i + Delta_j)`` within an aggregate
    * ``C~_ik = C^DA (C_i / Delta_i)(C_k / Delta_k)`` between donor ``i`` and acceptor ``k``

    Raises
    ------
    DispersiveError
        Any ``|C/Delta|`` above :data:`DISPERSIVE_LIMIT`.
    """
    if not spec.is_dispersive:
        raise DispersiveError(
            f"coupling ratios {np.round(spec.coupling_ratios(), 4).tolist()} exceed {DISPERSIVE_LIMIT}"
        )
    return _effective(spec)


def _qubit_levels(spec: Circuit2Spec):
    h = circuit2_full_single_excitation(spec)
    vals, vecs = np.linalg.eigh(h.matrix)
    qubits = [i for i, b in enumerate(h.basis) if not b.startswith("bus")]
    weight = (np.abs(vecs[qubits, :]) ** 2).sum(axis=0)
    return np.sort(vals[weight > 0.5])


def validate_reduction(spec: Circuit2Spec) -> dict:
    """Compare qubit-like levels of the full circuit with the reduced model.

    Qubit-like eigenstates carry more than half their weight on qubit basis
    states.  Deviations are reported in MHz and relative to the smallest
    qubit-bus detuning ``|Delta|``, the natural scale of the expansion.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DispersiveWarning)
        full = _qubit_levels(spec)
    eff = _effective(spec)
    reduced = np.sort(np.linalg.eigvalsh(build_hamiltonian(eff).matrix))
    detunings = np.abs(np.concatenate([spec.donor_detunings, spec.acceptor_detunings]))
    scale = float(detunings.min())
    ratio = float(spec.coupling_ratios().max())
    report = {
        "coupling_ratio": ratio,
        "dispersive": spec.is_dispersive,
        "detuning_scale": scale,
        "full_levels": [float(x) for x in full],
        "reduced_levels": [float(x) for x in reduced],
    }
    if len(full) != len(reduced):
        report.update(matched=False, max_abs_deviation=float("nan"), max_rel_deviation=float("nan"))
        return report
    dev = np.abs(full - reduced)
    report.update(
        matched=True,
        abs_deviations=[float(x) for x in dev],
        max_abs_deviation=float(dev.max()),
        max_rel_deviation=float(dev.max() / scale) if scale > 0 else float("nan"),
        bound=4.0 * ratio**2,
    )
    return report


def scaling_circuit(
    n_donors: int,
    n_acceptors: int,
    donor_energy: float,
    acceptor_energy: float,
    donor_coupling: float,
    acceptor_coupling: float,
    donor_detuning: float,
    acceptor_detuning: float,
    bus_coupling: float,
    **kw,
) -> Circuit2Spec:
    """Uniform bus circuit with ``n_donors`` on the donor bus and ``n_acceptors`` on the acceptor bus.

    ``donor_detuning`` and ``acceptor_detuning`` set ``Delta = 2 E - omega``
    for every qubit on the respective bus.
    """
    return Circuit2Spec(
        donor_energies=(donor_energy,) * n_donors,
        acceptor_energies=(acceptor_energy,) * n_acceptors,
        bus_donor=2.0 * donor_energy - donor_detuning,
        bus_acceptor=2.0 * acceptor_energy - acceptor_detuning,
        donor_bus_couplings=(donor_coupling,) * n_donors,
        acceptor_bus_couplings=(acceptor_coupling,) * n_acceptors,
        bus_coupling=bus_coupling,
        **kw,
    )


def detune_qubit(spec: Circuit2Spec, donor: int, shift: float) -> Circuit2Spec:
    """Copy of ``spec`` with donor ``donor`` (0-based) moved by ``shift`` in qubit energy ``E``."""
    energies = list(spec.donor_energies)
    energies[donor] += shift
    return Circuit2Spec(**{**spec.__dict__, "donor_energies": tuple(energies)})


def circuit2_from_targets(
    target: SystemSpec,
    donor_detuning: float,
    acceptor_detuning: float,
    bus_coupling: float,
) -> Circuit2Spec:
    """Bus circuit whose reduced model reproduces a uniform site model.

    Parameters
    ----------
    target : SystemSpec
        Effective parameters to hit.  Donor couplings, cross couplings and
        (with several acceptors) acceptor couplings must each be uniform.
    donor_detuning, acceptor_detuning : float
        ``Delta = 2 E - omega`` of the first donor and the first acceptor.
        The sign of ``donor_detuning`` must match the sign of the target
        donor coupling, since ``C~^DD = C**2 / (2 Delta)`` in the symmetric
        case.
    bus_coupling : float
        ``C^DA``; together with the detunings it fixes the acceptor-bus
        coupling through ``C~^DA = C^DA (C_D / Delta_D)(C_A / Delta_A)``.

    Returns
    -------
    Circuit2Spec
        Energies are exact: each qubit's detuning is solved self-consistently
        so that ``2 E + C**2 / Delta`` equals the target site energy with a
        shared bus frequency.  When donors are not degenerate their detunings
        differ slightly, so the reduced couplings match the targets only to
        first order in the energy spread.
    """
    def uniform(m, name):
        m = np.asarray(m, dtype=float)
        vals = m[~np.eye(len(m), dtype=bool)] if m.shape[0] == m.shape[1] and len(m) > 1 else m.ravel()
        if vals.size == 0:
            return 0.0
        if np.ptp(vals) > 1e-12:
            raise ValueError(f"{name} must be uniform")
        return float(vals[0])

    v_dd = uniform(target.donor_couplings, "donor couplings")
    v_aa = uniform(target.acceptor_couplings, "acceptor couplings")
    v_da = float(uniform(target.cross_couplings, "cross couplings")) if target.cross_couplings.size else 0.0
    if target.n_donors > 1 and v_dd * donor_detuning <= 0:
        raise ValueError("donor detuning must carry the sign of the donor coupling")
    if target.n_acceptors > 1 and v_aa * acceptor_detuning <= 0:
        raise ValueError("acceptor detuning must carry the sign of the acceptor coupling")
    c_d = np.sqrt(2.0 * v_dd * donor_detuning) if target.n_donors > 1 else abs(donor_detuning) * 0.05
    if target.n_acceptors > 1:
        c_a = np.sqrt(2.0 * v_aa * acceptor_detuning)
        bus_coupling = v_da * donor_detuning * acceptor_detuning / (c_d * c_a)
    else:
        c_a = v_da * donor_detuning * acceptor_detuning / (bus_coupling * c_d)

    def place(energies, c, delta0):
        e = np.asarray(energies, dtype=float)
        omega = e[0] - c**2 / delta0 - delta0
        x = e - omega
        # Delta solves Delta**2 - x Delta + c**2 = 0; keep the dispersive root
        root = np.sqrt(x * x - 4.0 * c * c)
        delta = 0.5 * (x + np.sign(x) * root)
        return (e - c**2 / delta) / 2.0, omega

    e_d, w_d = place(target.donor_energies, c_d, donor_detuning)
    e_a, w_a = place(target.acceptor_energies, c_a, acceptor_detuning)
    return Circuit2Spec(
        donor_energies=tuple(e_d),
        acceptor_energies=tuple(e_a),
        bus_donor=float(w_d),
        bus_acceptor=float(w_a),
        donor_bus_couplings=(float(c_d),) * target.n_donors,
        acceptor_bus_couplings=(float(c_a),) * target.n_acceptors,
        bus_coupling=float(bus_coupling),
        donor_reorg=target.donor_reorg,
        acceptor_reorg=target.acceptor_reorg,
        cutoff_frequency=target.cutoff_frequency,
    )
