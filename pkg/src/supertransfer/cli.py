"""``supertransfer`` command-line interface."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import runner


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="supertransfer", description="Collective excitation-transfer simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "transfer": "propagate one scenario and fit its transfer rate",
        "sweep-rule2": "rate map over donor reorganization energy and donor disorder",
        "scaling": "collective rate versus donor and acceptor numbers",
        "noise-calibrate": "synthesize OU noise and recover its spectrum",
        "circuit-reduce": "reduce a bus circuit to a site model and validate it",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--scenario", required=True, help="scenario YAML file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides the scenario)")
        s.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
        s.add_argument("--method", choices=runner.METHODS, default=None, help="propagation method")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        scenario = runner.Scenario.load(args.scenario)
        changes = {}
        if args.seed is not None:
            changes["seeds"] = {**scenario.seeds, "master": args.seed}
        if args.method is not None:
            changes["method"] = args.method
        if changes:
            scenario = scenario.replace(**changes)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    except runner.ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    jobs = args.jobs if args.jobs is not None else runner.default_jobs()
    if jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return runner.EXIT_CONFIG
    try:
        if args.command == "transfer":
            return runner.run_transfer(scenario, args.out, jobs)
        if args.command == "sweep-rule2":
            runner.run_rule2_sweep(scenario, args.out, jobs)
        elif args.command == "scaling":
            runner.run_scaling(scenario, args.out, jobs)
        elif args.command == "noise-calibrate":
            runner.run_noise_calibration(scenario, args.out)
        else:
            runner.run_circuit_reduce(scenario, args.out)
    except runner.ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    return runner.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
