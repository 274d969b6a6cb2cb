"""Spectral densities, Ornstein-Uhlenbeck site-energy noise and dephasing rates.

Frequencies are angular (rad/us) and quoted in MHz, matching the energy
convention of :mod:`supertransfer.model`.  The classical noise spectrum is the
two-sided transform ``S(w) = int C(t) exp(i w t) dt`` of the site-energy
autocorrelation ``C``, so an Ornstein-Uhlenbeck process with
``C(t) = sigma**2 exp(-wc |t|)`` has ``S(w) = 2 sigma**2 wc / (w**2 + wc**2)``
and its motional-narrowing dephasing rate is ``S(0) = 2 sigma**2 / wc``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize, signal

#: Pure-dephasing rate per unit reorganization energy (``Gamma = 2 lambda``).
DEPHASING_PER_REORG = 2.0

#: Relative upper limit of the numerical reorganization integral.
REORG_TRUNCATION = 1e3


@dataclass(frozen=True)
class SpectralDensity:
    """Drude-Lorentz or tabulated bath spectral density."""

    form: str = "drude_lorentz"
    reorg: float = 0.0
    cutoff: float = 1.0
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.form not in ("drude_lorentz", "tabulated"):
            raise ValueError(f"unknown spectral density form {self.form!r}")
        if self.form == "drude_lorentz":
            if self.reorg < 0 or self.cutoff <= 0:
                raise ValueError("need reorg >= 0 and cutoff > 0")
        else:
            if self.table is None:
                raise ValueError("tabulated spectral density needs a table")
            w, j = (np.asarray(a, dtype=float) for a in self.table)
            if w.ndim != 1 or w.shape != j.shape or w.size < 2:
                raise ValueError("table must be two equal-length 1-D arrays")
            if np.any(np.diff(w) <= 0) or w[0] < 0:
                raise ValueError("table frequencies must be non-negative and increasing")
            if np.any(j < 0):
                raise ValueError("spectral density must be non-negative")
            object.__setattr__(self, "table", (w, j))

    @classmethod
    def drude_lorentz(cls, reorg: float, cutoff: float) -> "SpectralDensity":
        return cls("drude_lorentz", reorg, cutoff)

    @classmethod
    def tabulated(cls, omega: Sequence[float], values: Sequence[float]) -> "SpectralDensity":
        return cls("tabulated", table=(omega, values))

    def __call__(self, omega):
        return evaluate_spectral_density(self, omega)


def evaluate_spectral_density(density: SpectralDensity, omega):
    """``J(omega)`` for ``omega >= 0``.

    The Drude-Lorentz form is normalized as
    ``(2 lambda wc / pi) * w / (w**2 + wc**2)`` so that
    ``int_0^inf J(w)/w dw = lambda``.  Tabulated densities are linearly
    interpolated and vanish outside the table.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    if density.form == "drude_lorentz":
        lam, wc = density.reorg, density.cutoff
        out = (2.0 * lam * wc / np.pi) * w / (w**2 + wc**2)
    else:
        tw, tj = density.table
        out = np.interp(w, tw, tj, left=0.0, right=0.0)
    return out if out.ndim else float(out)


def reorganization_energy(density: SpectralDensity) -> float:
    """``int_0^inf J(w)/w dw``.

    Drude-Lorentz: adaptive quadrature up to ``1e3 * wc`` with relative
    tolerance 1e-6, plus the closed-form tail beyond the truncation point.
    Tabulated: exact integral of the piecewise-linear interpolant, which
    diverges (``ValueError``) when ``J`` is nonzero at ``w = 0``.
    """
    if density.form == "drude_lorentz":
        lam, wc = density.reorg, density.cutoff
        if lam == 0:
            return 0.0
        w_max = REORG_TRUNCATION * wc
        head, _ = integrate.quad(
            lambda w: evaluate_spectral_density(density, w) / w if w > 0 else 2 * lam / (np.pi * wc),
            0.0, w_max, epsrel=1e-6, limit=200, points=[wc, 10 * wc, 100 * wc],
        )
        tail = (2.0 * lam / np.pi) * (np.pi / 2 - np.arctan(w_max / wc))
        return head + tail
    w, j = density.table
    total = 0.0
    for a, b, ja, jb in zip(w[:-1], w[1:], j[:-1], j[1:]):
        slope = (jb - ja) / (b - a)
        intercept = ja - slope * a
        if a == 0.0:
            if intercept != 0.0:
                raise ValueError("J(w)/w is not integrable at w = 0")
            total += slope * b
        else:
            total += intercept * np.log(b / a) + slope * (b - a)
    return float(total)


@dataclass(frozen=True)
class NoiseTrajectory:
    """One realization of site-energy noise on a uniform grid."""

    dt: float
    samples: np.ndarray
    seed: int

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "dE"])
            for t, x in zip(self.times, self.samples):
                writer.writerow([f"{t:.12g}", f"{x:.12g}"])


@dataclass(frozen=True)
class DephasingModel:
    """Pure-dephasing rate of each site, in the Hamiltonian's basis order."""

    site_rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.site_rates, dtype=float)
        if np.any(rates < 0):
            raise ValueError("dephasing rates must be non-negative")
        rates.setflags(write=False)
        object.__setattr__(self, "site_rates", rates)


def ou_coefficients(cutoff: float, dt: float) -> tuple[float, float]:
    """Decay factor and unit-variance innovation scale of the exact OU update."""
    a = np.exp(-cutoff * dt)
    return a, np.sqrt(-np.expm1(-2.0 * cutoff * dt))


def ou_integral_coefficients(cutoff, dt):
    """Joint exact update of a unit-variance OU process and its step integral.

    With ``z1, z2`` independent standard normals,

    ``x' = a x + cx z1``  and  ``I = b x + c1 z1 + c2 z2``

    reproduce the Gaussian law of ``(x(t+dt), integral of x over the step)``
    given ``x(t)``.  Works elementwise on array cutoffs.

    Returns
    -------
    a, cx, b, c1, c2 : ndarray
    """
    w = np.asarray(cutoff, dtype=float)
    u = w * dt
    e = -np.expm1(-u)
    a = 1.0 - e
    cx = np.sqrt(e * (2.0 - e))
    b = e / w
    cov = e * e / w
    # Var(I) = (2u - 3 + 4a - a^2) / w^2; the series avoids cancellation at small u
    coeffs = [2.0 / 3.0, -1.0 / 2.0, 7.0 / 30.0, -1.0 / 12.0, 31.0 / 1260.0, -1.0 / 160.0]
    series = u**3 * np.polyval(coeffs[::-1], u)
    direct = 2.0 * u - e * (2.0 + e)
    var = np.where(u < 1e-2, series, direct) / w**2
    c1 = cov / cx
    c2 = np.sqrt(np.maximum(var - c1 * c1, 0.0))
    return a, cx, b, c1, c2


def ou_integral_arma(cutoff, dt):
    """ARMA(1,1) form of the step integrals of a unit-variance OU process.

    The integrals ``I_j`` over consecutive steps of length ``dt`` form a
    stationary Gaussian sequence with

    ``I_j = a I_{j-1} + s (z_j + theta z_{j-1})``,  ``z_j ~ N(0, 1)``,

    so one normal per step generates them exactly.  A stationary start is
    ``I_0 = s z_0 + sqrt(var - s**2) z'``.

    Returns
    -------
    a, s, theta, var : ndarray
        AR coefficient, innovation scale, MA coefficient and ``Var(I_j)``.
    """
    a, cx, b, c1, c2 = ou_integral_coefficients(cutoff, dt)
    # I_j - a I_{j-1} = c1 z_j + c2 z'_j + c1 z_{j-1} - a c2 z'_{j-1}
    lag0 = 2.0 * c1 * c1 + (1.0 + a * a) * c2 * c2
    lag1 = c1 * c1 - a * c2 * c2
    rho = lag1 / lag0
    theta = np.where(rho == 0, 0.0, 2.0 * rho / (1.0 + np.sqrt(np.maximum(1.0 - 4.0 * rho * rho, 0.0))))
    s = np.sqrt(lag0 / (1.0 + theta * theta))
    var = b * b + c1 * c1 + c2 * c2
    return a, s, theta, var


def sample_ou_trajectory(
    sigma: float, cutoff: float, dt: float, duration: float, seed: int
) -> NoiseTrajectory:
    """Stationary OU trajectory via its exact discretization.

    ``x[n+1] = x[n] exp(-wc dt) + sigma sqrt(1 - exp(-2 wc dt)) xi[n]`` with
    ``x[0]`` drawn from the stationary law ``N(0, sigma**2)``.
    """
    if sigma < 0 or cutoff <= 0:
        raise ValueError("need sigma >= 0 and cutoff > 0")
    if dt <= 0 or dt > 0.1 / cutoff * (1 + 1e-12):
        raise ValueError("dt must resolve the correlation time (dt <= 0.1/cutoff)")
    if duration < 100.0 / cutoff * (1 - 1e-12):
        raise ValueError("duration must cover at least 100 correlation times")
    n = int(round(duration / dt)) + 1
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(n)
    a, b = ou_coefficients(cutoff, dt)
    x = np.empty(n)
    x[0] = xi[0]
    if n > 1:
        x[1:], _ = signal.lfilter([b], [1.0, -a], xi[1:], zi=[a * xi[0]])
    x *= sigma
    x.setflags(write=False)
    return NoiseTrajectory(dt=dt, samples=x, seed=int(seed))


def derive_seed(master_seed: int, index: int) -> int:
    """Independent child seed for stream ``index`` (run-order independent)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def sample_ou_ensemble(
    sigma: float, cutoff: float, dt: float, duration: float, n_traj: int, master_seed: int
) -> list[NoiseTrajectory]:
    return [
        sample_ou_trajectory(sigma, cutoff, dt, duration, derive_seed(master_seed, i))
        for i in range(n_traj)
    ]


def ensemble_autocorrelation(ensemble: Sequence[NoiseTrajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-averaged autocorrelation ``<x(t+tau) x(t)>`` versus lag.

    Uses the per-trajectory biased estimator (normalization by the record
    length) computed with FFTs.
    """
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    dt = ensemble[0].dt
    n = len(ensemble[0].samples)
    for tr in ensemble:
        if tr.dt != dt or len(tr.samples) != n:
            raise ValueError("ensemble trajectories must share dt and length")
    x = np.array([tr.samples for tr in ensemble])
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x, nfft, axis=1)
    acf = np.fft.irfft(np.abs(fx) ** 2, nfft, axis=1)[:, :n] / n
    return dt * np.arange(n), acf.mean(axis=0)


def empirical_spectrum(ensemble: Sequence[NoiseTrajectory], min_trajectories: int = 100):
    """Noise spectrum from the ensemble-averaged autocorrelation.

    Returns ``(omega, S)`` on the natural DFT grid ``2 pi k / (L dt)`` of the
    even extension of the autocorrelation (length ``L = 2n - 2``).
    """
    if len(ensemble) < min_trajectories:
        raise ValueError(f"need at least {min_trajectories} trajectories, got {len(ensemble)}")
    lags, c = ensemble_autocorrelation(ensemble)
    dt = ensemble[0].dt
    ext = np.concatenate([c, c[-2:0:-1]])
    s = dt * np.fft.rfft(ext).real
    omega = 2.0 * np.pi * np.fft.rfftfreq(len(ext), dt)
    return omega, s


def ou_spectrum(omega, sigma: float, cutoff: float):
    omega = np.asarray(omega, dtype=float)
    return 2.0 * sigma**2 * cutoff / (omega**2 + cutoff**2)


def fit_lorentzian(omega, spectrum, band: Optional[float] = None) -> tuple[float, float]:
    """Least-squares fit of ``2 sigma^2 wc / (w^2 + wc^2)``.

    Only frequencies up to ``band`` enter the fit; by default the band ends
    where the spectrum first falls below 5% of its zero-frequency value.
    Returns ``(sigma, cutoff)``; a vanishing spectrum gives ``(0.0, nan)``.
    """
    omega = np.asarray(omega, dtype=float)
    spectrum = np.asarray(spectrum, dtype=float)
    s0 = spectrum[0]
    if s0 <= 0 or not np.any(spectrum > 0):
        return 0.0, float("nan")
    if band is None:
        below = np.flatnonzero(spectrum < 0.05 * s0)
        band = omega[below[0]] if below.size else omega[-1]
    sel = omega <= band
    # half-width estimate: first crossing of S0/2
    half = np.flatnonzero(spectrum[sel] < 0.5 * s0)
    wc0 = omega[sel][half[0]] if half.size else omega[sel][-1]
    wc0 = max(wc0, omega[1])
    p0 = (np.sqrt(s0 * wc0 / 2.0), wc0)
    popt, _ = optimize.curve_fit(
        lambda w, sg, wc: ou_spectrum(w, sg, wc), omega[sel], spectrum[sel], p0=p0,
        sigma=spectrum[sel].clip(min=1e-3 * s0),
    )
    return abs(float(popt[0])), abs(float(popt[1]))


def dephasing_rate_from_reorg(reorg: float, cutoff: float, factor: float = DEPHASING_PER_REORG) -> float:
    """Markovian pure-dephasing rate ``Gamma = factor * lambda`` (default 2).

    ``cutoff`` is only validated; the Markovian limit assumes it is large
    compared with the system frequencies.
    """
    if reorg < 0 or cutoff <= 0 or factor < 0:
        raise ValueError("need reorg >= 0, cutoff > 0, factor >= 0")
    return factor * reorg


def ou_sigma_for_rate(rate: float, cutoff: float) -> float:
    """OU amplitude whose motional-narrowing rate ``2 sigma^2 / wc`` equals ``rate``."""
    if rate < 0 or cutoff <= 0:
        raise ValueError("need rate >= 0 and cutoff > 0")
    return float(np.sqrt(rate * cutoff / 2.0))


def dephasing_model(spec, basis: Sequence[str], factor: float = DEPHASING_PER_REORG) -> DephasingModel:
    """Site dephasing rates from the donor/acceptor reorganization energies.

    Sites that are neither donors nor acceptors (bus modes) are not dephased.
    """
    g_d = dephasing_rate_from_reorg(spec.donor_reorg, spec.cutoff_frequency, factor)
    g_a = dephasing_rate_from_reorg(spec.acceptor_reorg, spec.cutoff_frequency, factor)
    rates = [g_d if b.startswith("D") else g_a if b.startswith("A") else 0.0 for b in basis]
    return DephasingModel(rates)


def spectrum_to_csv(path, omega, spectrum) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["omega", "J"])
        for w, s in zip(omega, spectrum):
            writer.writerow([f"{w:.12g}", f"{s:.12g}"])
