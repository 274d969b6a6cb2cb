"""Scenario files, simulation orchestration and output writers.

A scenario is a YAML document with a top-level ``schema_version``.  The
``system`` block selects one of three physical descriptions:

``site``
    :class:`~supertransfer.model.SystemSpec` fields, or ``preset: table1``
    plus keyword overrides for :func:`~supertransfer.model.table1_spec`.
``circuit1``
    :class:`~supertransfer.circuits.Circuit1Spec` fields plus the bath
    parameters ``donor_reorg``, ``acceptor_reorg`` and ``cutoff_frequency``.
``circuit2``
    :class:`~supertransfer.circuits.Circuit2Spec` fields.  Dynamics run on the
    reduced three-site model; ``circuit-reduce`` compares it with the full
    bus circuit.

All numbers are written with 12 significant digits.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import circuits, noise, rates
from .dynamics import PropagationResult, ou_parameters, propagate_lindblad, propagate_stochastic
from .model import (
    ExcitonState,
    SystemHamiltonian,
    SystemSpec,
    build_hamiltonian,
    prepare_state,
    table1_spec,
    uniform_spec,
)

SCHEMA_VERSION = 1
METHODS = ("lindblad", "stochastic")
STATE_KINDS = ("localized", "mixture", "delocalized", "lowest_donor_eigenstate")
OUTPUTS = ("populations", "rates", "sweep", "scaling", "spectrum", "reduction")
DIGITS = 12

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FIT = 2

#: Stream index for static-disorder draws, kept apart from trajectory blocks.
_DISORDER_STREAM = 2**32


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field (dotted)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# number formatting


def fmt(x) -> str:
    """Decimal text with 12 significant digits."""
    return f"{float(x):.{DIGITS}g}"


def _round(obj):
    # recursively round floats so JSON text is reproducible to 12 digits
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else float(fmt(x))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, data) -> None:
    text = json.dumps(_round(data), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# scenario model


_SITE_FIELDS = set(SystemSpec.__dataclass_fields__)
_BATH_FIELDS = {"donor_reorg", "acceptor_reorg", "cutoff_frequency"}
_C1_FIELDS = {"donor_energies", "acceptor_energies", "qubit_coupling", "cross_coupling", "acceptor_coupling"}
_C2_FIELDS = set(circuits.Circuit2Spec.__dataclass_fields__)
_CAL_FIELDS = set(circuits.TransmonCalibration.__dataclass_fields__)
_TABLE1_ARGS = {"donor_coupling", "cross_coupling", "gap", "donor_detuning", "donor_reorg",
                "acceptor_reorg", "cutoff_frequency"}


@dataclass
class Axis:
    """One sweep axis: ``points`` values from ``min`` to ``max``."""

    min: float
    max: float
    points: int
    spacing: str = "linear"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, self.points)
        return np.linspace(self.min, self.max, self.points)

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "points": self.points, "spacing": self.spacing}


@dataclass
class Scenario:
    """Parsed scenario document.

    ``system`` keeps the validated parameter mapping (``type`` included) so
    that serialization reproduces the input exactly; :meth:`site_spec` builds
    the effective site model.
    """

    name: str
    system: dict
    initial_state: dict = field(default_factory=lambda: {"kind": "mixture"})
    method: str = "lindblad"
    horizon: Any = "auto"
    steps: int = 1000
    seeds: dict = field(default_factory=lambda: {"master": 0, "trajectories": 1000})
    outputs: list = field(default_factory=lambda: ["populations", "rates"])
    sweep: Optional[dict] = None
    scaling: Optional[dict] = None
    noise: Optional[dict] = None
    comparison: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("<root>", "scenario must be a mapping")
        version = data.get("schema_version")
        if version is None:
            raise ScenarioError("schema_version", "missing")
        if version != SCHEMA_VERSION:
            raise ScenarioError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
        known = set(cls.__dataclass_fields__)
        for key in data:
            if key not in known:
                raise ScenarioError(key, "unknown field")
        if "name" not in data or not isinstance(data["name"], str):
            raise ScenarioError("name", "required text field")
        if "system" not in data:
            raise ScenarioError("system", "missing")
        kwargs = {k: copy.deepcopy(v) for k, v in data.items() if k != "schema_version"}
        sc = cls(**kwargs)
        sc.validate()
        return sc

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError("<root>", f"not valid YAML ({exc})") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_yaml(Path(path).read_text(encoding="utf-8"))

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "name": self.name, "system": copy.deepcopy(self.system),
               "initial_state": copy.deepcopy(self.initial_state), "method": self.method,
               "horizon": self.horizon, "steps": self.steps, "seeds": copy.deepcopy(self.seeds),
               "outputs": list(self.outputs)}
        for key in ("sweep", "scaling", "noise", "comparison"):
            if getattr(self, key) is not None:
                out[key] = copy.deepcopy(getattr(self, key))
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def replace(self, **changes) -> "Scenario":
        data = self.to_dict()
        data.update(changes)
        return Scenario.from_dict(data)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ScenarioError("method", f"expected one of {METHODS}, got {self.method!r}")
        if not (self.horizon == "auto" or (_is_number(self.horizon) and self.horizon > 0)):
            raise ScenarioError("horizon", "expected 'auto' or a positive number of microseconds")
        if not isinstance(self.steps, int) or self.steps < 100:
            raise ScenarioError("steps", "expected an integer >= 100")
        self._validate_seeds()
        self._validate_outputs()
        spec = self.site_spec()
        self._validate_state(spec)
        if self.sweep is not None:
            self._validate_sweep()
        if self.scaling is not None:
            self._validate_scaling()
        if self.noise is not None:
            self._validate_noise()
        if self.comparison is not None:
            _check_keys(self.comparison, {"horizon", "steps", "tolerance"}, "comparison")

    def _validate_seeds(self):
        if not isinstance(self.seeds, dict):
            raise ScenarioError("seeds", "expected a mapping")
        _check_keys(self.seeds, {"master", "trajectories"}, "seeds")
        master = self.seeds.get("master", 0)
        if not isinstance(master, int) or isinstance(master, bool) or not 0 <= master < 2**64:
            raise ScenarioError("seeds.master", "expected an unsigned 64-bit integer")
        n = self.seeds.get("trajectories", 1000)
        if not isinstance(n, int) or n < 1:
            raise ScenarioError("seeds.trajectories", "expected a positive integer")
        if self.method == "stochastic" and "trajectories" not in self.seeds:
            raise ScenarioError("seeds.trajectories", "required for the stochastic method")

    def _validate_outputs(self):
        if not isinstance(self.outputs, list):
            raise ScenarioError("outputs", "expected a list")
        for i, o in enumerate(self.outputs):
            if o not in OUTPUTS:
                raise ScenarioError(f"outputs[{i}]", f"unknown artifact {o!r}; expected one of {OUTPUTS}")

    def _validate_state(self, spec: SystemSpec):
        st = self.initial_state
        if not isinstance(st, dict) or "kind" not in st:
            raise ScenarioError("initial_state", "expected a mapping with 'kind'")
        _check_keys(st, {"kind", "value"}, "initial_state")
        if st["kind"] not in STATE_KINDS:
            raise ScenarioError("initial_state.kind", f"expected one of {STATE_KINDS}")
        h = build_hamiltonian(spec)
        try:
            prepare_state(h, st["kind"], _state_value(st))
        except (ValueError, IndexError, TypeError) as exc:
            raise ScenarioError("initial_state.value", str(exc)) from exc

    def _validate_sweep(self):
        _check_keys(self.sweep, {"lambda_d", "delta"}, "sweep")
        for key in ("lambda_d", "delta"):
            if key not in self.sweep:
                raise ScenarioError(f"sweep.{key}", "missing axis")
            _axis(self.sweep[key], f"sweep.{key}")
        if self.system.get("type") == "circuit2":
            raise ScenarioError("sweep", "the rule-2 sweep acts on site or circuit1 systems")

    def _validate_scaling(self):
        _check_keys(self.scaling, {"donors", "acceptors", "hold_gap"}, "scaling")
        for key in ("donors", "acceptors"):
            vals = self.scaling.get(key)
            if not isinstance(vals, list) or not vals or not all(isinstance(v, int) and v >= 1 for v in vals):
                raise ScenarioError(f"scaling.{key}", "expected a non-empty list of positive integers")
        if not isinstance(self.scaling.get("hold_gap", False), bool):
            raise ScenarioError("scaling.hold_gap", "expected true or false")

    def _validate_noise(self):
        allowed = {"reorg", "cutoff", "trajectories", "dt", "duration", "sigma"}
        _check_keys(self.noise, allowed, "noise")
        if ("reorg" in self.noise) == ("sigma" in self.noise):
            raise ScenarioError("noise", "give exactly one of 'reorg' or 'sigma'")
        for key in ("cutoff",):
            if not _is_number(self.noise.get(key)) or self.noise[key] <= 0:
                raise ScenarioError(f"noise.{key}", "expected a positive number")
        n = self.noise.get("trajectories", 200)
        if not isinstance(n, int) or n < 100:
            raise ScenarioError("noise.trajectories", "at least 100 trajectories are required")

    # -- physics ----------------------------------------------------------

    def site_spec(self) -> SystemSpec:
        """Effective site model of the configured system."""
        return _site_spec(self.system)

    def circuit2_spec(self) -> circuits.Circuit2Spec:
        if self.system.get("type") != "circuit2":
            raise ScenarioError("system.type", "a circuit2 system is required")
        return _circuit2(self.system)

    @property
    def master_seed(self) -> int:
        return int(self.seeds.get("master", 0))

    @property
    def n_trajectories(self) -> int:
        return int(self.seeds.get("trajectories", 1000))


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_keys(block, allowed, path):
    if not isinstance(block, dict):
        raise ScenarioError(path, "expected a mapping")
    for key in block:
        if key not in allowed:
            raise ScenarioError(f"{path}.{key}", "unknown field")


def _axis(block, path) -> Axis:
    _check_keys(block, {"min", "max", "points", "spacing"}, path)
    for key in ("min", "max"):
        if not _is_number(block.get(key)):
            raise ScenarioError(f"{path}.{key}", "expected a number")
    pts = block.get("points")
    if not isinstance(pts, int) or pts < 1:
        raise ScenarioError(f"{path}.points", "expected a positive integer")
    spacing = block.get("spacing", "linear")
    if spacing not in ("linear", "log"):
        raise ScenarioError(f"{path}.spacing", "expected 'linear' or 'log'")
    if spacing == "log" and (block["min"] <= 0 or block["max"] <= 0):
        raise ScenarioError(f"{path}.min", "log spacing needs positive bounds")
    if block["min"] < 0:
        raise ScenarioError(f"{path}.min", "axis values must be non-negative")
    return Axis(float(block["min"]), float(block["max"]), pts, spacing)


def _state_value(st: dict):
    value = st.get("value")
    if st["kind"] == "delocalized" and isinstance(value, list):
        return [complex(v) if isinstance(v, str) else v for v in value]
    return value


def _build(factory, params, path):
    try:
        return factory(**params)
    except TypeError as exc:
        raise ScenarioError(path, str(exc)) from exc
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _site_spec(system: dict) -> SystemSpec:
    if not isinstance(system, dict):
        raise ScenarioError("system", "expected a mapping")
    kind = system.get("type", "site")
    params = {k: v for k, v in system.items() if k != "type"}
    if kind == "site":
        if "preset" in params:
            preset = params.pop("preset")
            if preset != "table1":
                raise ScenarioError("system.preset", f"unknown preset {preset!r}")
            for key in params:
                if key not in _TABLE1_ARGS:
                    raise ScenarioError(f"system.{key}", "not a table1 preset argument")
            return _build(table1_spec, params, "system")
        for key in params:
            if key not in _SITE_FIELDS:
                raise ScenarioError(f"system.{key}", "unknown field")
        return _build(SystemSpec, params, "system")
    if kind == "circuit1":
        c1 = _circuit1(system)
        h = circuits.circuit1_single_excitation(c1)
        bath = {k: params[k] for k in _BATH_FIELDS if k in params}
        return _spec_from_matrix(h, **bath)
    if kind == "circuit2":
        c2 = _circuit2(system)
        try:
            return circuits.frohlich_nakajima_reduce(c2)
        except circuits.DispersiveError as exc:
            raise ScenarioError("system", str(exc)) from exc
    raise ScenarioError("system.type", f"expected site, circuit1 or circuit2, got {kind!r}")


def _circuit1(system: dict) -> circuits.Circuit1Spec:
    params = {k: v for k, v in system.items() if k != "type"}
    for key in params:
        if key not in _C1_FIELDS | _BATH_FIELDS | {"calibration"}:
            raise ScenarioError(f"system.{key}", "unknown field")
    cal = params.pop("calibration", None)
    if cal is not None:
        _check_keys(cal, _CAL_FIELDS, "system.calibration")
        cal = _build(circuits.TransmonCalibration, cal, "system.calibration")
    c1 = {k: v for k, v in params.items() if k in _C1_FIELDS}
    return _build(circuits.Circuit1Spec, {**c1, "calibration": cal}, "system")


def _circuit2(system: dict) -> circuits.Circuit2Spec:
    params = {k: v for k, v in system.items() if k != "type"}
    for key in params:
        if key not in _C2_FIELDS:
            raise ScenarioError(f"system.{key}", "unknown field")
    return _build(circuits.Circuit2Spec, params, "system")


def _spec_from_matrix(h: SystemHamiltonian, **bath) -> SystemSpec:
    m = np.asarray(h.matrix).real
    d, a = h.donor_indices, h.acceptor_indices
    vd = m[np.ix_(d, d)].copy()
    va = m[np.ix_(a, a)].copy()
    np.fill_diagonal(vd, 0.0)
    np.fill_diagonal(va, 0.0)
    return SystemSpec(
        donor_energies=np.diag(m)[d], acceptor_energies=np.diag(m)[a],
        donor_couplings=vd, acceptor_couplings=va, cross_couplings=m[np.ix_(d, a)], **bath,
    )


# ---------------------------------------------------------------------------
# single simulation


@dataclass
class TransferResult:
    """Propagation, fit and rule verdict of one run."""

    propagation: PropagationResult
    fit: Optional[rates.RateFit]
    rules: rates.RuleVerdict
    horizon: float
    fit_error: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.fit is not None and self.fit.exponential_valid

    def to_dict(self) -> dict:
        out = {"horizon": self.horizon, "method": self.propagation.method, "rules": self.rules.to_dict()}
        if self.fit is not None:
            out.update(self.fit.to_dict())
            out["transfer_rate"] = self.fit.transfer_rate
            out["diagnostics"] = self.fit.diagnostics()
        else:
            out.update(gamma=None, p_infinity=None, rms_residual=None, r_squared=None,
                       exponential_valid=False, transfer_rate=None, fit_error=self.fit_error)
        if self.propagation.method == "stochastic":
            out["trajectories"] = self.propagation.n_traj
        return out


def simulate(
    spec: SystemSpec,
    state: dict,
    method: str = "lindblad",
    horizon="auto",
    steps: int = 1000,
    master_seed: int = 0,
    n_traj: int = 1000,
    jobs: int = 1,
) -> TransferResult:
    """Propagate ``spec`` from ``state`` and fit the acceptor population.

    Parameters
    ----------
    spec : SystemSpec
        Site model.  Static disorder, if any, is drawn from a stream derived
        from ``master_seed``.
    state : dict
        ``{"kind": ..., "value": ...}`` as accepted by
        :func:`~supertransfer.model.prepare_state`.
    method : {"lindblad", "stochastic"}
    horizon : float or "auto"
        Simulation window in microseconds; ``auto`` uses six expected
        transfer times.
    steps : int
        Number of output intervals.
    master_seed, n_traj, jobs :
        Stochastic ensemble controls.

    Returns
    -------
    TransferResult
        A fit failure is recorded in ``fit_error`` rather than raised.
    """
    seed = None
    if spec.static_disorder_donor > 0 or spec.static_disorder_acceptor > 0:
        seed = noise.derive_seed(master_seed, _DISORDER_STREAM)
    h = build_hamiltonian(spec, seed)
    rho0 = prepare_state(h, state["kind"], _state_value(state))
    deph = noise.dephasing_model(spec, h.basis)
    t_max = rates.auto_horizon(h, deph.site_rates, rho0) if horizon == "auto" else float(horizon)
    if method == "lindblad":
        prop = propagate_lindblad(h, deph, rho0, t_max, steps)
    elif method == "stochastic":
        sigmas, cutoffs = ou_parameters(deph, spec.cutoff_frequency)
        prop = propagate_stochastic(h, sigmas, cutoffs, rho0, t_max, steps, n_traj, master_seed, jobs=jobs)
    else:
        raise ValueError(f"unknown method {method!r}")
    fit, err = None, None
    try:
        fit = rates.fit_exponential(prop.times, prop.acceptor_population)
    except rates.FitError as exc:
        err = str(exc)
    return TransferResult(prop, fit, rates.check_rules(spec), t_max, err)


def run_transfer(scenario: Scenario, out_dir, jobs: int = 1) -> int:
    """Propagate and fit one scenario; write ``populations.csv`` and ``rates.json``.

    Returns the exit status: 0 for a valid exponential fit, 2 otherwise.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = simulate(scenario.site_spec(), scenario.initial_state, scenario.method, scenario.horizon,
                   scenario.steps, scenario.master_seed, scenario.n_trajectories, jobs)
    if "populations" in scenario.outputs:
        res.propagation.to_csv(out / "populations.csv")
    if "rates" in scenario.outputs:
        write_json(out / "rates.json", {"scenario": scenario.name, "initial_state": scenario.initial_state,
                                        **res.to_dict()})
    return EXIT_OK if res.valid else EXIT_FIT


# ---------------------------------------------------------------------------
# sweeps


def _parallel_map(func, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


def _cell(task):
    spec_dict, state, method, horizon, steps, seed, n_traj = task[:7]
    with_baseline = len(task) > 7 and task[7]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = SystemSpec.from_dict(spec_dict)
            res = simulate(spec, state, method, horizon, steps, seed, n_traj)
            base = simulate(spec, {"kind": "mixture"}, method, "auto", steps, seed, n_traj) if with_baseline else None
    except Exception as exc:  # crash isolation: any cell failure is recorded, not raised
        return {"status": f"error: {type(exc).__name__}: {exc}"}
    if res.fit is None:
        return {"status": f"fit failed: {res.fit_error}", "pass_rule1": res.rules.pass_rule1}
    out = {
        "status": "ok" if res.fit.exponential_valid else "invalid",
        "gamma": res.fit.gamma,
        "transfer_rate": res.fit.transfer_rate,
        "r_squared": res.fit.r_squared,
        "exponential_valid": res.fit.exponential_valid,
        "pass_rule1": res.rules.pass_rule1,
    }
    if base is not None and base.fit is not None:
        out["cell_gamma0"] = base.fit.transfer_rate
    return out


def _with_spread(spec: SystemSpec, delta: float) -> SystemSpec:
    # donors evenly spread over [E_1, E_1 + delta]
    e0 = float(spec.donor_energies[0])
    nd = spec.n_donors
    energies = [e0] if nd == 1 else list(e0 + delta * np.arange(nd) / (nd - 1))
    return spec.replace(donor_energies=energies)


def baseline_rate(scenario: Scenario, spec: Optional[SystemSpec] = None) -> float:
    """``gamma_0``: forward rate of ``spec`` from the equal mixture, in this invocation."""
    spec = scenario.site_spec() if spec is None else spec
    res = simulate(spec, {"kind": "mixture"}, scenario.method, "auto", scenario.steps,
                   scenario.master_seed, scenario.n_trajectories)
    if res.fit is None:
        raise rates.FitError(f"baseline fit failed: {res.fit_error}")
    return res.fit.transfer_rate


def run_rule2_sweep(scenario: Scenario, out_dir, jobs: int = 1) -> list[dict]:
    """Rate map over donor reorganization energy and donor energy spread.

    ``gamma_0`` is the forward rate of the base system from the equal mixture.
    Each cell runs the scenario's initial state and is normalized by
    ``gamma_0`` (column ``normalized``).  Each cell also runs its own equal
    mixture; the ratio to that rate is the column ``enhancement``.  Failed
    cells are kept with an explanatory ``status``.
    Writes ``sweep.csv`` and returns the cell records in row-major order
    (``lambda_d`` outer).
    """
    if scenario.sweep is None:
        raise ScenarioError("sweep", "missing")
    base = scenario.site_spec()
    lam_axis = _axis(scenario.sweep["lambda_d"], "sweep.lambda_d").values()
    del_axis = _axis(scenario.sweep["delta"], "sweep.delta").values()
    gamma0 = baseline_rate(scenario, base)
    tasks, coords = [], []
    for lam in lam_axis:
        for delta in del_axis:
            spec = _with_spread(base.replace(donor_reorg=float(lam)), float(delta))
            tasks.append((spec.to_dict(), scenario.initial_state, scenario.method, scenario.horizon,
                          scenario.steps, scenario.master_seed, scenario.n_trajectories, True))
            coords.append((float(lam), float(delta)))
    cells = _parallel_map(_cell, tasks, jobs)
    records = []
    for (lam, delta), cell in zip(coords, cells):
        rate = cell.get("transfer_rate")
        own = cell.get("cell_gamma0")
        records.append({"lambda_d": lam, "delta": delta, "gamma0": gamma0,
                        "normalized": rate / gamma0 if rate is not None else float("nan"),
                        "enhancement": rate / own if rate is not None and own else float("nan"), **cell})
    header = ["lambda_d", "delta", "gamma", "transfer_rate", "normalized", "enhancement", "r_squared",
              "exponential_valid", "pass_rule1", "gamma0", "cell_gamma0", "status"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", header, [_row(r, header) for r in records])
    return records


def _row(record, header):
    row = []
    for key in header:
        v = record.get(key)
        if v is None:
            row.append("nan" if key not in ("status",) else "")
        elif isinstance(v, (bool, np.bool_)):
            row.append("true" if v else "false")
        else:
            row.append(v)
    return row


def scaling_spec(base: SystemSpec, n_donors: int, n_acceptors: int, hold_gap: bool = False) -> SystemSpec:
    """Uniform ``n_donors`` x ``n_acceptors`` system with the base parameters.

    Energies, couplings and baths come from donor 1, acceptor 1 and the first
    couplings of ``base``.  Donors are degenerate.  With ``hold_gap`` the
    donor site energy shifts by ``-(n_donors - 1) V^D`` so that the
    collective (all-in-phase) donor state keeps the gap it has for a single
    donor.
    """
    vd = float(base.donor_couplings[0, 1]) if base.n_donors > 1 else 0.0
    va = float(base.acceptor_couplings[0, 1]) if base.n_acceptors > 1 else 0.0
    ed = float(base.donor_energies[0])
    ea = float(base.acceptor_energies[0])
    if hold_gap:
        ed -= (n_donors - 1) * vd
        ea -= (n_acceptors - 1) * va
    return uniform_spec(
        n_donors, n_acceptors, ed, ea, vd, float(base.cross_couplings[0, 0]), va,
        donor_reorg=base.donor_reorg, acceptor_reorg=base.acceptor_reorg,
        cutoff_frequency=base.cutoff_frequency,
    )


def run_scaling(scenario: Scenario, out_dir, jobs: int = 1) -> list[dict]:
    """Collective rate versus aggregate sizes; writes ``scaling.csv``.

    Every combination starts in the lowest donor eigenstate unless the
    scenario names another state; ``gamma_0`` is the (1, 1) forward rate
    of the same invocation.
    """
    if scenario.scaling is None:
        raise ScenarioError("scaling", "missing")
    base = scenario.site_spec()
    hold = bool(scenario.scaling.get("hold_gap", False))
    combos = [(nd, na) for nd in scenario.scaling["donors"] for na in scenario.scaling["acceptors"]]
    if (1, 1) not in combos:
        combos.insert(0, (1, 1))
    state = scenario.initial_state
    if state["kind"] in ("localized", "mixture") and state.get("value") is not None:
        raise ScenarioError("initial_state.value", "explicit values do not carry over to other sizes")
    tasks = []
    for nd, na in combos:
        spec = scaling_spec(base, nd, na, hold)
        tasks.append((spec.to_dict(), {"kind": state["kind"]} if state["kind"] != "localized" else state,
                      scenario.method, scenario.horizon, scenario.steps, scenario.master_seed,
                      scenario.n_trajectories))
    cells = _parallel_map(_cell, tasks, jobs)
    by = dict(zip(combos, cells))
    gamma0 = by[(1, 1)].get("transfer_rate")
    records = []
    for nd, na in combos:
        cell = by[(nd, na)]
        rate = cell.get("transfer_rate")
        ref = nd * na * gamma0 if gamma0 is not None else float("nan")
        rec = {"n_donors": nd, "n_acceptors": na, "gamma0": gamma0, "reference": ref, **cell}
        rec["ratio"] = rate / ref if rate is not None and ref else float("nan")
        rec["deviation"] = rec["ratio"] - 1.0
        records.append(rec)
    header = ["n_donors", "n_acceptors", "gamma", "transfer_rate", "reference", "ratio", "deviation",
              "r_squared", "exponential_valid", "gamma0", "status"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "scaling.csv", header, [_row(r, header) for r in records])
    return records


# ---------------------------------------------------------------------------
# noise calibration and circuit reduction


def run_noise_calibration(scenario: Scenario, out_dir) -> dict:
    """Synthesize an OU ensemble, estimate its spectrum and fit a Lorentzian.

    Writes ``spectrum.csv`` (empirical and analytic spectra) and
    ``calibration.json`` with the fitted amplitude and cutoff, the implied
    dephasing rate ``2 sigma**2 / wc`` and the implied reorganization energy
    under the ``Gamma = 2 lambda`` mapping.
    """
    if scenario.noise is None:
        raise ScenarioError("noise", "missing")
    cfg = scenario.noise
    cutoff = float(cfg["cutoff"])
    if "sigma" in cfg:
        sigma = float(cfg["sigma"])
    else:
        sigma = noise.ou_sigma_for_rate(noise.dephasing_rate_from_reorg(float(cfg["reorg"]), cutoff), cutoff)
    dt = float(cfg.get("dt", 0.05 / cutoff))
    duration = float(cfg.get("duration", 200.0 / cutoff))
    n_traj = int(cfg.get("trajectories", 200))
    try:
        ens = noise.sample_ou_ensemble(sigma, cutoff, dt, duration, n_traj, scenario.master_seed)
    except ValueError as exc:
        raise ScenarioError("noise", str(exc)) from exc
    omega, spec = noise.empirical_spectrum(ens)
    analytic = noise.ou_spectrum(omega, sigma, cutoff)
    fit_sigma, fit_cutoff = noise.fit_lorentzian(omega, spec)
    rate = 2.0 * fit_sigma**2 / fit_cutoff if fit_sigma > 0 else 0.0
    report = {
        "sigma": sigma, "cutoff": cutoff, "dt": dt, "duration": duration, "trajectories": n_traj,
        "fitted_sigma": fit_sigma, "fitted_cutoff": fit_cutoff if fit_sigma > 0 else None,
        "implied_dephasing_rate": rate, "implied_reorg": rate / noise.DEPHASING_PER_REORG,
        "target_dephasing_rate": 2.0 * sigma**2 / cutoff,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "spectrum.csv", ["omega", "empirical", "analytic"],
              [(float(w), float(s), float(a)) for w, s, a in zip(omega, spec, analytic)])
    write_json(out / "calibration.json", {"scenario": scenario.name, **report})
    return report


def compare_reduction(
    spec: circuits.Circuit2Spec,
    state: dict,
    horizon="auto",
    steps: int = 1000,
) -> dict:
    """Acceptor population of the full bus circuit against the reduced model.

    Both run the Lindblad route with the exact interval propagator (bus
    frequencies make the adaptive integrator slow); qubits dephase at
    ``2 lambda`` and bus modes not at all.  The donor block of the initial state is copied onto
    the circuit's donor qubits.  Returns the time grid, both curves, the
    bus-mode population at the end and the sup-norm difference.
    """
    eff = circuits.frohlich_nakajima_reduce(spec)
    he = build_hamiltonian(eff)
    rho_e = prepare_state(he, state["kind"], _state_value(state))
    de = noise.dephasing_model(eff, he.basis)
    t_max = rates.auto_horizon(he, de.site_rates, rho_e) if horizon == "auto" else float(horizon)
    reduced = propagate_lindblad(he, de, rho_e, t_max, steps, solver="expm")
    hf = circuits.circuit2_full_single_excitation(spec)
    rho = np.zeros((hf.dim, hf.dim), dtype=complex)
    rho[np.ix_(hf.donor_indices, hf.donor_indices)] = np.asarray(rho_e.rho)[np.ix_(he.donor_indices, he.donor_indices)]
    full = propagate_lindblad(hf, noise.dephasing_model(spec, hf.basis), ExcitonState(rho, hf.basis), t_max, steps,
                              solver="expm")
    pa_r, pa_f = reduced.acceptor_population, full.acceptor_population
    bus = [i for i, b in enumerate(hf.basis) if b.startswith("bus")]
    return {
        "times": reduced.times,
        "reduced": pa_r,
        "full": pa_f,
        "horizon": t_max,
        "sup_norm": float(np.max(np.abs(pa_r - pa_f))),
        "final_bus_population": float(full.site_populations[-1, bus].sum()),
    }


def run_circuit_reduce(scenario: Scenario, out_dir) -> dict:
    """Reduce a bus circuit and validate the reduction; writes ``reduction.json``.

    With a ``comparison`` block the full and reduced acceptor populations
    are propagated as well and written to ``populations.csv``.
    """
    spec = scenario.circuit2_spec()
    report = {"scenario": scenario.name, "circuit": spec.to_dict(),
              "coupling_ratios": spec.coupling_ratios().tolist()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", circuits.DispersiveWarning)
        report["eigenvalues"] = circuits.validate_reduction(spec)
    if spec.is_dispersive:
        report["effective"] = circuits.frohlich_nakajima_reduce(spec).to_dict()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if scenario.comparison is not None and spec.is_dispersive:
        cmp_cfg = scenario.comparison
        tol = float(cmp_cfg.get("tolerance", 0.03))
        cmp = compare_reduction(spec, scenario.initial_state, cmp_cfg.get("horizon", "auto"),
                                int(cmp_cfg.get("steps", scenario.steps)))
        report["dynamics"] = {"horizon": cmp["horizon"], "sup_norm": cmp["sup_norm"], "tolerance": tol,
                              "agrees": cmp["sup_norm"] <= tol,
                              "final_bus_population": cmp["final_bus_population"]}
        write_csv(out / "populations.csv", ["t", "acceptor_reduced", "acceptor_full"],
                  [(float(t), float(a), float(b)) for t, a, b in zip(cmp["times"], cmp["reduced"], cmp["full"])])
    write_json(out / "reduction.json", report)
    return report


def default_jobs() -> int:
    return os.cpu_count() or 1
