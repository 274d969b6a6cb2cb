"""Collective (super)transfer of excitations between donor and acceptor aggregates.

Modules
-------
model
    Site Hamiltonians and initial states.
noise
    Spectral densities, Ornstein-Uhlenbeck noise and dephasing rates.
dynamics
    Lindblad and stochastic propagation.
rates
    Exponential rate fits and design-rule checks.
circuits
    Directly coupled and bus-coupled transmon circuits.
runner
    Scenario files, sweeps and output writers.
"""

from .model import SystemSpec, build_hamiltonian, prepare_state, table1_spec
from .noise import DephasingModel, dephasing_model
from .dynamics import propagate_lindblad, propagate_stochastic
from .rates import RateFit, check_rules, fit_exponential
from . import circuits
from .runner import Scenario, simulate

__version__ = "0.1.0"

__all__ = [
    "SystemSpec", "build_hamiltonian", "prepare_state", "table1_spec",
    "DephasingModel", "dephasing_model", "propagate_lindblad", "propagate_stochastic",
    "RateFit", "check_rules", "fit_exponential", "circuits", "Scenario", "simulate",
]
