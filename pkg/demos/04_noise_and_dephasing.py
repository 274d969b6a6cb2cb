"""From injected noise to a dephasing rate, and back to the dynamics.

Synthesizes Ornstein-Uhlenbeck noise for a 10 MHz reorganization energy,
recovers its Lorentzian spectrum, and compares a stochastic ensemble with
the Lindblad dynamics that the implied dephasing rates predict.
"""

import numpy as np

from supertransfer import build_hamiltonian, prepare_state, table1_spec
from supertransfer.dynamics import ou_parameters, propagate_lindblad, propagate_stochastic
from supertransfer.noise import (
    dephasing_model,
    dephasing_rate_from_reorg,
    empirical_spectrum,
    fit_lorentzian,
    ou_sigma_for_rate,
    sample_ou_ensemble,
)


def main():
    cutoff = 1000.0
    rate = dephasing_rate_from_reorg(10.0, cutoff)
    sigma = ou_sigma_for_rate(rate, cutoff)
    ens = sample_ou_ensemble(sigma, cutoff, 0.05 / cutoff, 0.2, 500, master_seed=1)
    fs, fw = fit_lorentzian(*empirical_spectrum(ens))
    print(f"target sigma {sigma:.2f}, cutoff {cutoff:.0f}; fitted {fs:.2f}, {fw:.0f}")
    print(f"implied dephasing rate {2 * fs**2 / fw:.2f} MHz (target {rate:.2f})")

    spec = table1_spec()
    h = build_hamiltonian(spec)
    deph = dephasing_model(spec, h.basis)
    rho0 = prepare_state(h, "mixture")
    sig, wc = ou_parameters(deph, spec.cutoff_frequency)
    sto = propagate_stochastic(h, sig, wc, rho0, 2.0, 200, 1000, master_seed=2)
    lin = propagate_lindblad(h, deph, rho0, 2.0, 200)
    diff = np.max(np.abs(sto.acceptor_population - lin.acceptor_population))
    print(f"1000 noisy trajectories vs Lindblad over 2 us: sup |dP_A| = {diff:.4f}")


if __name__ == "__main__":
    main()
