"""Command-line entry point.

    annidiff <subcommand> --config <path.json> [--seed S] [--out DIR]
             [--replicas R] [--workers W]

The subcommand selects the experiment kind (overriding the config's ``kind``
if both are given).  Exit codes: 0 success, 2 invalid configuration (the
message names the offending key), 3 numerical refusal (resolution/CFL/Picard
guards).
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, load_config, run_experiment, _KINDS
from .pde import NumericalRefusal


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="annidiff",
        description="Two-species annihilating reflected diffusions: "
                    "simulator, limit-PDE solvers, verification experiments.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in _KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=False, default=None,
                       help="JSON config file (keys: kind, sim{...}, solver{...}, ...)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--N", type=int, default=None, dest="n_particles",
                       help="convenience override of sim.N")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            with open(args.config) as fh:
                data = json.load(fh)
        else:
            data = {"sim": {"N": 1000}}
        data["kind"] = args.command
        if args.n_particles is not None:
            data.setdefault("sim", {})["N"] = args.n_particles
        overrides = {"seed": args.seed, "out": args.out,
                     "replicas": args.replicas, "workers": args.workers}
        cfg = load_config(data, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run_experiment(cfg)
    except NumericalRefusal as exc:
        print(f"numerical refusal: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
