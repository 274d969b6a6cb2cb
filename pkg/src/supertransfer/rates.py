"""Transfer rates from dynamics, reference rates and the two design rules.

A saturating acceptor population is summarized by the exponential law
``P_A(t) = P_inf (1 - exp(-gamma t))``.  ``gamma`` is the relaxation rate of
the donor-acceptor populations and includes back transfer; the forward
(donor to acceptor) rate is the initial slope ``P_inf * gamma``, which is what
golden-rule estimates and rate enhancements refer to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ExcitonState, SystemHamiltonian, SystemSpec, eigenstates

#: Rule 1 ratio above which a rate description is not trusted.
RULE1_VALID = 1.0 / 3.0
#: Rule 1 ratio at or below which transfer is cleanly exponential.
RULE1_CLEAN = 1.0 / 9.0
#: Rule 2 ratios must both stay at or below this value.
RULE2_MAX = 1.0
#: Coefficient of determination required for an exponential description.
R2_MIN = 0.99
#: Lag-1 residual autocorrelation that marks systematic (oscillatory) misfit.
OSCILLATION_LAG1 = 0.5
#: Residuals below this fraction of the plateau are treated as numerical noise.
NOISE_FLOOR = 0.01
#: Series whose largest magnitude is below this are treated as "no transfer".
FLAT_TOLERANCE = 1e-8

_RATIO_EPS = 1e-12


class FitError(RuntimeError):
    """The exponential fit could not be carried out."""


class EnhancementBoundError(AssertionError):
    """A rate ratio exceeds the collective upper bound ``N_D * N_A``."""


@dataclass(frozen=True)
class RateFit:
    """Exponential fit of an acceptor population.

    Only the first five fields are part of the serialized summary; the rest
    are diagnostics.
    """

    gamma: float
    p_infinity: float
    rms_residual: float
    r_squared: float
    exponential_valid: bool
    oscillation: bool = False
    residual_lag1: float = 0.0
    sign_changes: int = 0
    window_end: float = 0.0
    n_points: int = 0

    @property
    def transfer_rate(self) -> float:
        """Forward rate ``P_inf * gamma``, the initial slope of ``P_A``."""
        return self.p_infinity * self.gamma

    def to_dict(self) -> dict:
        return {
            "gamma": float(self.gamma),
            "p_infinity": float(self.p_infinity),
            "rms_residual": float(self.rms_residual),
            "r_squared": float(self.r_squared),
            "exponential_valid": bool(self.exponential_valid),
        }

    def diagnostics(self) -> dict:
        return {
            "transfer_rate": float(self.transfer_rate),
            "oscillation": bool(self.oscillation),
            "residual_lag1": float(self.residual_lag1),
            "sign_changes": int(self.sign_changes),
            "window_end": float(self.window_end),
            "n_points": int(self.n_points),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _saturation(g, t):
    return -np.expm1(-g * t)


def _lm_fit(t, y, p, g, max_iter=200, tol=1e-12):
    """Damped Gauss-Newton for ``p (1 - exp(-g t))`` on normalized time."""
    def residual(p, g):
        return p * _saturation(g, t) - y

    r = residual(p, g)
    cost = r @ r
    mu = 1e-3
    for _ in range(max_iter):
        e = np.exp(-g * t)
        jac = np.column_stack([-np.expm1(-g * t), p * t * e])
        jtj = jac.T @ jac
        grad = jac.T @ r
        if np.max(np.abs(grad)) <= 1e-15 * max(1.0, np.max(np.abs(y))):
            return p, g, True
        while True:
            lhs = jtj + mu * np.diag(np.diag(jtj) + 1e-300)
            try:
                step = -np.linalg.solve(lhs, grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                if mu > 1e12:
                    return p, g, False
                continue
            p_new, g_new = p + step[0], g + step[1]
            if g_new > 0:
                r_new = residual(p_new, g_new)
                cost_new = r_new @ r_new
                if cost_new <= cost:
                    break
            mu *= 10.0
            if mu > 1e12:
                # no descent direction left: already at the minimum
                return p, g, True
        small = abs(step[0]) <= tol * (abs(p) + tol) and abs(step[1]) <= tol * (abs(g) + tol)
        p, g, r, cost = p_new, g_new, r_new, cost_new
        mu = max(mu / 10.0, 1e-12)
        if small:
            return p, g, True
    return p, g, False


def fit_exponential(times: Sequence[float], series: Sequence[float], max_iter: int = 200) -> RateFit:
    """Fit ``P_inf (1 - exp(-gamma t))`` to a saturating acceptor population.

    The fit window runs from the first sample to the first time the series
    reaches 99 % of its maximum, with all points weighted equally.  The
    initial guess comes from a log-linear fit of ``1 - P/max(P)``, which is
    refined by Levenberg-Marquardt damped Gauss-Newton iterations.

    Parameters
    ----------
    times, series : array_like
        At least 50 samples, times increasing from ``t >= 0``; the series
        must start near zero.
    max_iter : int
        Iteration cap; exceeding it raises :class:`FitError`.

    Returns
    -------
    RateFit
        ``exponential_valid`` requires ``r_squared >= 0.99`` and no
        oscillation flag.  The flag is raised when the lag-1 autocorrelation
        of the residuals exceeds 0.5 while their rms exceeds 1 % of the
        plateau.  A series that never leaves zero returns ``gamma = 0``.

    Raises
    ------
    ValueError
        Too few samples, bad time axis or a series that does not start near 0.
    FitError
        Non-convergence, or a series that has not saturated (the fitted
        ``gamma`` times the window length is below one).
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("times and series must be 1-D arrays of equal length")
    if len(t) < 50:
        raise ValueError("at least 50 samples are required")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must be increasing from t >= 0")
    scale = np.max(np.abs(y))
    if scale <= FLAT_TOLERANCE:
        rms = float(np.sqrt(np.mean(y * y)))
        return RateFit(0.0, 0.0, rms, 1.0, True, window_end=float(t[-1]), n_points=len(t))
    if abs(y[0]) > 0.05 * scale:
        raise ValueError("series must start near zero")
    p_hat = float(np.max(y))
    end = int(np.argmax(y >= 0.99 * p_hat)) + 1
    tw, yw = t[:end], y[:end]
    if end < 3:
        raise FitError("series jumps to its maximum immediately")
    t_end = tw[-1]
    tn = tw / t_end

    ratio = 1.0 - yw / p_hat
    use = (ratio > 0) & (tn > 0)
    if np.count_nonzero(use) >= 2:
        z = -np.log(ratio[use])
        g0 = float(np.sum(tn[use] * z) / np.sum(tn[use] ** 2))
    else:
        g0 = 1.0
    g0 = g0 if np.isfinite(g0) and g0 > 0 else 1.0

    p, g, ok = _lm_fit(tn, yw, p_hat, g0, max_iter=max_iter)
    if g < 1.0:
        raise FitError("series has not saturated within the fit window")
    if not ok:
        raise FitError(f"no convergence within {max_iter} iterations")
    gamma = g / t_end

    resid = yw - p * _saturation(g, tn)
    rms = float(np.sqrt(np.mean(resid**2)))
    ss_tot = float(np.sum((yw - yw.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    centered = resid - resid.mean()
    denom = float(centered @ centered)
    lag1 = float(centered[:-1] @ centered[1:]) / denom if denom > 0 else 0.0
    floor = NOISE_FLOOR * abs(p)
    signs = np.sign(resid[np.abs(resid) > floor])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    oscillation = bool(lag1 > OSCILLATION_LAG1 and rms > floor)
    valid = bool(r2 >= R2_MIN and not oscillation)
    return RateFit(
        gamma=float(gamma),
        p_infinity=float(p),
        rms_residual=rms,
        r_squared=float(r2),
        exponential_valid=valid,
        oscillation=oscillation,
        residual_lag1=lag1,
        sign_changes=changes,
        window_end=float(t_end),
        n_points=int(end),
    )


def golden_rule_matrix_element(v_da, c_donor, c_acceptor) -> float:
    """``|sum_jk c_Dj conj(c_Ak) V_jk|**2`` for normalized coefficient vectors.

    Examples
    --------
    >>> golden_rule_matrix_element([[10.0], [10.0]], [2**-0.5, 2**-0.5], [1.0])
    200.00000000000006
    """
    v = np.atleast_2d(np.asarray(v_da))
    a = np.asarray(c_donor, dtype=complex).ravel()
    b = np.asarray(c_acceptor, dtype=complex).ravel()
    if v.shape != (a.size, b.size):
        raise ValueError(f"coupling block {v.shape} does not match coefficients ({a.size}, {b.size})")
    for name, c in (("donor", a), ("acceptor", b)):
        if abs(np.vdot(c, c).real - 1.0) > 1e-8:
            raise ValueError(f"{name} coefficients are not normalized")
    return float(abs(a @ v @ b.conj()) ** 2)


def analytic_two_level_rate(coupling: float, detuning: float, gamma_phi_total: float) -> float:
    """Haken-Strobl hopping rate ``2 V**2 G / (detuning**2 + G**2)`` with ``G = gamma_phi_total``.

    ``G`` is the Lorentzian half width of the donor-acceptor lineshape.  For
    the pure-dephasing master equation used here the donor-acceptor coherence
    decays at :func:`coherence_decay_rate`, and passing that value gives the
    exact incoherent hopping rate; passing the summed site rates gives the
    coarser estimate used for quick checks.
    """
    if gamma_phi_total < 0:
        raise ValueError("dephasing must be non-negative")
    denom = detuning**2 + gamma_phi_total**2
    if denom == 0:
        return float("inf") if coupling else 0.0
    return 2.0 * coupling**2 * gamma_phi_total / denom


def coherence_decay_rate(gamma_donor: float, gamma_acceptor: float) -> float:
    """Decay rate of a donor-acceptor coherence, ``(G_D + G_A) / 2``."""
    return 0.5 * (gamma_donor + gamma_acceptor)


def enhancement(gamma_deloc: float, gamma_loc: float, n_donors: int, n_acceptors: int, eps: float = 0.05) -> float:
    """Rate ratio ``gamma_deloc / gamma_loc`` checked against ``N_D * N_A``.

    Ratios below one (subtransfer) are returned unchanged; a ratio above
    ``N_D * N_A + eps`` raises :class:`EnhancementBoundError`.
    """
    if gamma_loc <= 0 or gamma_deloc < 0:
        raise ValueError("rates must be positive")
    if n_donors < 1 or n_acceptors < 1:
        raise ValueError("aggregate sizes must be positive")
    ratio = gamma_deloc / gamma_loc
    bound = n_donors * n_acceptors
    if ratio > bound + eps:
        raise EnhancementBoundError(f"enhancement {ratio:.4g} exceeds N_D*N_A = {bound}")
    return ratio


def efficiency(gamma: float, gamma_loss: float) -> float:
    """``gamma / (gamma + gamma_loss)``."""
    if gamma < 0 or gamma_loss < 0:
        raise ValueError("rates must be non-negative")
    if gamma == 0 and gamma_loss == 0:
        raise ValueError("efficiency undefined when both rates vanish")
    return gamma / (gamma + gamma_loss)


@dataclass(frozen=True)
class RuleVerdict:
    """Design-rule ratios and verdicts for one system."""

    rule1_ratio: float
    rule2_ratios: tuple
    pass_rule1: bool
    pass_rule2: bool

    @property
    def rule1_clean(self) -> bool:
        return self.rule1_ratio <= RULE1_CLEAN + _RATIO_EPS

    def to_dict(self) -> dict:
        return {
            "rule1_ratio": float(self.rule1_ratio),
            "rule2_ratios": [float(x) for x in self.rule2_ratios],
            "pass_rule1": bool(self.pass_rule1),
            "pass_rule2": bool(self.pass_rule2),
        }


def donor_disorder(spec: SystemSpec) -> float:
    """``delta^D``: the larger of the static disorder and the spread of donor energies."""
    e = np.asarray(spec.donor_energies)
    spread = float(e.max() - e.min()) if e.size else 0.0
    static = float(np.max(spec.static_disorder_donor)) if np.size(spec.static_disorder_donor) else 0.0
    return max(static, spread)


def _safe_ratio(num, den):
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return num / den


def check_rules(spec: SystemSpec) -> RuleVerdict:
    """Evaluate both design rules from the aggregate parameters of ``spec``.

    Rule 1 compares the largest cross coupling with the mean donor plus mean
    acceptor reorganization energy (valid at a ratio of at most 1/3, clean at
    1/9).  Rule 2 compares the donor disorder and the mean donor
    reorganization energy with the largest intra-donor coupling; both ratios
    must be at most one.
    """
    v_da = float(np.max(np.abs(spec.cross_couplings))) if np.size(spec.cross_couplings) else 0.0
    lam_d = float(np.mean(spec.donor_reorg)) if np.size(spec.donor_reorg) else 0.0
    lam_a = float(np.mean(spec.acceptor_reorg)) if np.size(spec.acceptor_reorg) else 0.0
    v_d = float(np.max(np.abs(spec.donor_couplings))) if np.size(spec.donor_couplings) else 0.0
    r1 = _safe_ratio(v_da, lam_d + lam_a)
    r2 = (_safe_ratio(donor_disorder(spec), v_d), _safe_ratio(lam_d, v_d))
    return RuleVerdict(
        rule1_ratio=r1,
        rule2_ratios=r2,
        pass_rule1=bool(r1 <= RULE1_VALID + _RATIO_EPS),
        pass_rule2=bool(all(x <= RULE2_MAX + _RATIO_EPS for x in r2)),
    )


def expected_transfer_rate(h: SystemHamiltonian, rates, rho0: ExcitonState) -> float:
    """Golden-rule forward rate out of the donor block for the state ``rho0``.

    Each donor eigenstate ``a`` populated with weight ``p_a`` transfers to each
    acceptor eigenstate ``b`` at
    ``2 |M_ab|**2 G / ((E_a - E_b)**2 + G**2)`` with ``G`` the mean
    donor-acceptor coherence decay rate.  If the state has no bright weight
    the estimate for a site-localized start is returned instead, so the
    result can be used to size a simulation window.
    """
    rates = np.asarray(rates, dtype=float)
    d_idx, a_idx = h.donor_indices, h.acceptor_indices
    g = coherence_decay_rate(float(np.mean(rates[list(d_idx)])), float(np.mean(rates[list(a_idx)])))
    v = np.asarray(h.matrix)[np.ix_(d_idx, a_idx)]
    donors = eigenstates(h, "donor")
    acceptors = eigenstates(h, "acceptor")
    rho_d = np.asarray(rho0.rho)[np.ix_(d_idx, d_idx)]

    def total(weights):
        out = 0.0
        for w, (ea, ca) in zip(weights, donors):
            for eb, cb in acceptors:
                m2 = golden_rule_matrix_element(v, ca, cb)
                out += w * analytic_two_level_rate(np.sqrt(m2), ea - eb, g)
        return out

    weights = [float(np.real(np.vdot(c, rho_d @ c))) for _, c in donors]
    rate = total(weights)
    if rate <= 1e-12:
        rate = 0.0
        for j in range(len(d_idx)):
            e_j = np.zeros(len(d_idx))
            e_j[j] = 1.0
            ej = float(np.asarray(h.matrix)[d_idx[j], d_idx[j]].real)
            for eb, cb in acceptors:
                m2 = golden_rule_matrix_element(v, e_j, cb)
                rate += analytic_two_level_rate(np.sqrt(m2), ej - eb, g) / len(d_idx)
    return float(rate)


def auto_horizon(h: SystemHamiltonian, rates, rho0: ExcitonState, factor: float = 6.0) -> float:
    """Simulation window ``factor / gamma_expected`` (see :func:`expected_transfer_rate`)."""
    rate = expected_transfer_rate(h, rates, rho0)
    if rate <= 0:
        raise ValueError("no transfer expected; give an explicit horizon")
    return factor / rate
