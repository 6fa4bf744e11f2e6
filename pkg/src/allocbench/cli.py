"""``allocbench`` command line."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .core import Algorithm, ConfigError, Mode, Variant
from .bench.checks import CELL_CHECKS, GRID_CHECKS
from .bench.runner import ExperimentIOError, ExperimentSpec, config_from_dict, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="allocbench",
                                description="Balanced-allocation simulator and benchmark harness.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment grid and write results")
    r.add_argument("--config", help="experiment JSON (base, sweep, trials_per_cell, checks)")
    r.add_argument("--n", type=int, help="number of bins")
    r.add_argument("--m", type=int, help="number of balls")
    r.add_argument("--d", type=int, help="choices per draw")
    r.add_argument("--gamma-max", type=int, help="retry cap (default ceil(log2 n))")
    r.add_argument("--algorithm", choices=[a.value for a in Algorithm])
    r.add_argument("--mode", choices=[m.value for m in Mode])
    r.add_argument("--beta", type=float, help="two-choice probability for --algorithm beta")
    r.add_argument("--retry-cap", type=int, help="candidate sets for --algorithm greedy-retry")
    r.add_argument("--weight-dist", metavar="SPEC",
                   help="uniform:w_star,k | twopoint:w_star,k,p | tnormal:w_star,k,sigma")
    r.add_argument("--dims", type=int, help="dimensions D of multidimensional balls")
    r.add_argument("--populated", type=int, help="populated dimensions f per ball")
    r.add_argument("--md-dist", metavar="DIST", help="uniform | custom:<json file>")
    r.add_argument("--parallel", action="store_true", help="round-synchronous protocol")
    r.add_argument("--no-catch-up", action="store_true",
                   help="numbered mode without hole credit (bare cap rule)")
    r.add_argument("--seed", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--checks", help="comma-separated check names, or 'list'")
    r.add_argument("--c0", type=float, help="gap constant for the gap_theorem check")
    r.add_argument("--out", help="output directory")
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("--trace", action="store_true", help="write per-ball JSONL traces")
    r.add_argument("-q", "--quiet", action="store_true")
    return p


_FLAG_FIELDS = {"n": "n", "m": "m", "d": "d", "gamma_max": "gamma_max", "algorithm": "algorithm",
                "mode": "mode", "beta": "beta", "retry_cap": "retry_cap", "dims": "dims",
                "populated": "populated", "seed": "seed", "trials": "trials"}


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    if args.config:
        spec = ExperimentSpec.from_file(args.config)
        base = spec.base.to_dict()
    else:
        spec = None
        base = {}
    for flag, fld in _FLAG_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            base[fld] = value
    if args.weight_dist:
        base["weight_model"] = args.weight_dist
        base["variant"] = Variant.WEIGHTED.value
    if args.dims is not None or args.populated is not None:
        base["variant"] = Variant.MULTIDIM.value
    if args.md_dist:
        base["md_dist"] = args.md_dist
    if args.parallel:
        base["variant"] = Variant.PARALLEL.value
        base.setdefault("mode", Mode.SAMPLED.value)
    if args.no_catch_up:
        base["catch_up"] = False
    if spec is None:
        missing = [k for k in ("n", "m") if k not in base]
        if missing:
            raise ConfigError(f"--{' and --'.join(missing)} required without --config")
        checks = [c for c in (args.checks or "").split(",") if c]
        return ExperimentSpec(base=config_from_dict(base), checks=checks,
                              **({"c0": args.c0} if args.c0 is not None else {}))
    spec.base = config_from_dict(base)
    if args.trials is not None:
        spec.trials_per_cell = args.trials
    if args.checks:
        spec.checks = [c for c in args.checks.split(",") if c]
    if args.c0 is not None:
        spec.c0 = args.c0
    return spec


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.checks == "list":
        print("\n".join(sorted([*CELL_CHECKS, *GRID_CHECKS])))
        return 0
    try:
        spec = _spec_from_args(args)
        say = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
        result = run_experiment(spec, out_dir=args.out, fmt=args.format, trace=args.trace,
                                progress=say)
    except (ConfigError, ValueError) as exc:
        print(f"allocbench: error: {exc}", file=sys.stderr)
        return 2
    except ExperimentIOError as exc:
        print(f"allocbench: {exc}", file=sys.stderr)
        return 3
    for check in result.checks:
        print(check.line())
    if args.out and not args.quiet:
        print(f"results written to {args.out}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
