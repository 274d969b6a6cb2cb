import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from supertransfer.dynamics import (
    PropagationError,
    UnderResolvedError,
    acceptor_population,
    default_stochastic_step,
    ou_parameters,
    propagate_lindblad,
    propagate_stochastic,
)
from supertransfer.model import ExcitonState, SystemSpec, build_hamiltonian, prepare_state, table1_spec, uniform_spec
from supertransfer.noise import DephasingModel, dephasing_model


def oracle_lindblad(h, rates, rho0, times):
    """Column-stacked Liouvillian with explicit projector dissipators."""
    m = np.asarray(h.matrix, dtype=complex)
    n = m.shape[0]
    eye = np.eye(n)
    liou = -1j * (np.kron(eye, m) - np.kron(m.T, eye))
    for k, g in enumerate(rates):
        p = np.zeros((n, n))
        p[k, k] = 1.0
        liou += g * (np.kron(p.T, p) - 0.5 * np.kron(eye, p) - 0.5 * np.kron(p.T, eye))
    v0 = np.asarray(rho0.rho, dtype=complex).ravel(order="F")
    return np.array([(linalg.expm(liou * t) @ v0).reshape(n, n, order="F") for t in times])


def two_site(v, detuning=0.0, rates=(0.0, 0.0)):
    spec = SystemSpec([detuning], [0.0], [[0.0]], [[0.0]], [[v]])
    h = build_hamiltonian(spec)
    return h, DephasingModel(rates), prepare_state(h, "localized", 0)


def test_decoupled_localized_state_is_stationary():
    spec = uniform_spec(2, 1, 5.0, 0.0, 0.0, 0.0, donor_reorg=3.0, acceptor_reorg=1.0)
    h = build_hamiltonian(spec)
    res = propagate_lindblad(h, dephasing_model(spec, h.basis), prepare_state(h, "localized", 1), 2.0, 200)
    np.testing.assert_allclose(res.site_populations, np.tile([0, 1, 0], (201, 1)), atol=1e-12)


@pytest.mark.parametrize("solver", ["rk45", "expm"])
def test_resonant_rabi_oscillation(solver):
    v = 3.0
    h, deph, rho0 = two_site(v)
    res = propagate_lindblad(h, deph, rho0, 2.0, 400, solver=solver)
    np.testing.assert_allclose(res.acceptor_population, np.sin(v * res.times) ** 2, atol=1e-7)


def test_table1_mixture_saturates_monotonically():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    res = propagate_lindblad(h, dephasing_model(spec, h.basis), prepare_state(h, "mixture"), 10.0, 1000)
    pa = acceptor_population(res)
    assert pa[0] == 0.0
    assert np.min(np.diff(pa)) > -1e-6
    # infinite-temperature dephasing equilibrates over the three sites
    assert pa[-1] == pytest.approx(1 / 3, abs=2e-3)


def test_relaxed_uniform_mixture_has_one_third_on_the_acceptor():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    rho = ExcitonState(np.eye(3) / 3, h.basis)
    res = propagate_lindblad(h, dephasing_model(spec, h.basis), rho, 1.0, 100)
    np.testing.assert_allclose(res.acceptor_population, 1 / 3, atol=1e-10)


@pytest.mark.parametrize("solver", ["rk45", "expm"])
def test_lindblad_matches_independent_oracle(solver):
    spec = table1_spec()
    h = build_hamiltonian(spec)
    deph = dephasing_model(spec, h.basis)
    rho0 = prepare_state(h, "lowest_donor_eigenstate")
    res = propagate_lindblad(h, deph, rho0, 3.0, 300, solver=solver)
    ref = oracle_lindblad(h, deph.site_rates, rho0, res.times[::30])
    np.testing.assert_allclose(res.states[::30], ref, atol=2e-7)


def test_halving_output_steps_does_not_change_populations():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    deph = dephasing_model(spec, h.basis)
    rho0 = prepare_state(h, "mixture")
    fine = propagate_lindblad(h, deph, rho0, 5.0, 1000)
    coarse = propagate_lindblad(h, deph, rho0, 5.0, 500)
    assert np.max(np.abs(fine.site_populations[::2] - coarse.site_populations)) < 1e-6


def test_lindblad_input_errors():
    h, deph, rho0 = two_site(1.0)
    with pytest.raises(ValueError):
        propagate_lindblad(h, deph, rho0, 1.0, 99)
    with pytest.raises(ValueError):
        propagate_lindblad(h, deph, rho0, 0.0, 100)
    with pytest.raises(ValueError):
        propagate_lindblad(h, DephasingModel([1.0]), rho0, 1.0, 100)
    with pytest.raises(ValueError):
        propagate_lindblad(h, deph, ExcitonState(np.diag([1.0, 0.0]), ("D1", "D2")), 1.0, 100)
    with pytest.raises(ValueError):
        propagate_lindblad(h, deph, rho0, 1.0, 100, solver="euler")


def test_integrator_failure_is_reported(monkeypatch):
    from types import SimpleNamespace

    from supertransfer import dynamics

    def failing(*args, **kwargs):
        return SimpleNamespace(success=False, message="step size too small")

    monkeypatch.setattr(dynamics.integrate, "solve_ivp", failing)
    h, deph, rho0 = two_site(1.0)
    with pytest.raises(PropagationError, match="step size"):
        propagate_lindblad(h, deph, rho0, 1.0, 100)


def test_populations_csv(tmp_path):
    h, deph, rho0 = two_site(1.0)
    res = propagate_lindblad(h, deph, rho0, 1.0, 100)
    res.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text(encoding="utf-8").split("\n")
    assert lines[0] == "t,D1,A1"
    assert lines[1] == "0,1,0"
    assert len(lines) == 103 and lines[-1] == ""


# ---------------------------------------------------------------------------
# stochastic route


def test_noise_free_ensemble_equals_coherent_evolution():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    rho0 = prepare_state(h, "mixture")
    res = propagate_stochastic(h, np.zeros(3), 1000.0, rho0, 1.0, 100, n_traj=3, master_seed=0)
    ref = propagate_lindblad(h, DephasingModel(np.zeros(3)), rho0, 1.0, 100, solver="expm")
    assert np.max(np.abs(res.states - ref.states)) < 1e-8


def test_motional_narrowing_coherence_decay():
    # [DERIVED] both sites noisy: <exp(-i int (x1 - x2))> = exp(-Var) with
    # Var = 2 * 2 sigma^2 / wc^2 * (wc t - 1 + exp(-wc t)), slope 2 sigma^2 / wc
    sigma, wc = 100.0, 1000.0
    h = build_hamiltonian(SystemSpec([0.0], [0.0], [[0.0]], [[0.0]], [[0.0]]))
    plus = ExcitonState(np.full((2, 2), 0.5), h.basis)
    res = propagate_stochastic(h, [sigma, sigma], wc, plus, 0.05, 100, n_traj=20_000, master_seed=3,
                               check_step=False)
    coh = np.abs(res.states[:, 0, 1])
    t = res.times
    sel = t >= 0.01
    slope = -np.polyfit(t[sel], np.log(coh[sel]), 1)[0]
    assert slope == pytest.approx(2 * sigma**2 / wc, rel=0.05)
    exact = 0.5 * np.exp(-2 * sigma**2 / wc**2 * (wc * t - 1 + np.exp(-wc * t)))
    assert np.max(np.abs(coh - exact)) < 0.01


def test_single_noisy_site_against_reference_decays_at_half_the_rate():
    sigma, wc = 100.0, 1000.0
    h = build_hamiltonian(SystemSpec([0.0], [0.0], [[0.0]], [[0.0]], [[0.0]]))
    plus = ExcitonState(np.full((2, 2), 0.5), h.basis)
    res = propagate_stochastic(h, [sigma, 0.0], wc, plus, 0.05, 100, n_traj=20_000, master_seed=4,
                               check_step=False)
    sel = res.times >= 0.01
    slope = -np.polyfit(res.times[sel], np.log(np.abs(res.states[sel, 0, 1])), 1)[0]
    # Lindblad with rates (G, 0) damps the coherence at G/2 = sigma^2/wc
    assert slope == pytest.approx(sigma**2 / wc, rel=0.05)


def test_stochastic_is_deterministic_and_schedule_independent():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    sig, wc = ou_parameters(dephasing_model(spec, h.basis), spec.cutoff_frequency)
    rho0 = prepare_state(h, "mixture")
    kw = dict(t_max=0.2, n_steps=100, n_traj=300, check_step=False)
    a = propagate_stochastic(h, sig, wc, rho0, master_seed=5, **kw)
    b = propagate_stochastic(h, sig, wc, rho0, master_seed=5, **kw)
    c = propagate_stochastic(h, sig, wc, rho0, master_seed=6, **kw)
    d = propagate_stochastic(h, sig, wc, rho0, master_seed=5, jobs=2, **kw)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)
    assert np.max(np.abs(a.states - d.states)) < 1e-13


def test_stochastic_preserves_trace_and_positivity():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    sig, wc = ou_parameters(dephasing_model(spec, h.basis), spec.cutoff_frequency)
    res = propagate_stochastic(h, sig, wc, prepare_state(h, "lowest_donor_eigenstate"), 0.5, 100, 64, 1,
                               check_step=False)
    np.testing.assert_allclose(np.trace(res.states, axis1=1, axis2=2).real, 1.0, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(res.states)) > -1e-12


def test_coarse_step_is_detected():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    sig, wc = ou_parameters(dephasing_model(spec, h.basis), spec.cutoff_frequency)
    rho0 = prepare_state(h, "mixture")
    with pytest.raises(UnderResolvedError):
        propagate_stochastic(h, sig, wc, rho0, 0.5, 100, 32, 1, dt=2e-3)


def test_default_step_rule():
    spec = table1_spec()
    h = build_hamiltonian(spec)
    assert default_stochastic_step(h, np.full(3, 1000.0)) == pytest.approx(5e-5)
    fast = build_hamiltonian(table1_spec(gap=5000.0))
    assert default_stochastic_step(fast, np.full(3, 1000.0)) < 5e-5


def test_stochastic_input_errors():
    h, _, rho0 = two_site(1.0)
    with pytest.raises(ValueError):
        propagate_stochastic(h, [1.0], 1000.0, rho0, 1.0, 100, 10, 0)
    with pytest.raises(ValueError):
        propagate_stochastic(h, [1.0, -1.0], 1000.0, rho0, 1.0, 100, 10, 0)
    with pytest.raises(ValueError):
        propagate_stochastic(h, [1.0, 1.0], 1000.0, rho0, 1.0, 100, 0, 0)


# ---------------------------------------------------------------------------
# properties


@st.composite
def small_systems(draw):
    nd, na = draw(st.integers(1, 3)), draw(st.integers(1, 2))
    e = st.floats(-100, 100)
    v = st.floats(-20, 20)
    spec = uniform_spec(nd, na, draw(e), draw(e), draw(v), draw(v), draw(v),
                        donor_reorg=draw(st.floats(0, 20)), acceptor_reorg=draw(st.floats(0, 40)))
    kind = draw(st.sampled_from(["mixture", "delocalized", "lowest_donor_eigenstate", "localized"]))
    return spec, kind


@given(small_systems())
@settings(max_examples=20)
def test_stochastic_invariants(case):
    spec, kind = case
    h = build_hamiltonian(spec)
    rho0 = prepare_state(h, kind, 0 if kind == "localized" else None)
    sig, wc = ou_parameters(dephasing_model(spec, h.basis), spec.cutoff_frequency)
    res = propagate_stochastic(h, sig, wc, rho0, 0.05, 100, 16, 2, check_step=False)
    tr = np.trace(res.states, axis1=1, axis2=2)
    np.testing.assert_allclose(tr.real, 1.0, atol=1e-10)
    np.testing.assert_allclose(res.donor_population + res.acceptor_population, 1.0, atol=1e-10)
    assert np.min(np.linalg.eigvalsh(res.states)) > -1e-10
