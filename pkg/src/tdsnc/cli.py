"""Command-line front end.

    tdsnc analyze  SCENARIO [--out DIR] [--grid-step S] [--horizon H]
    tdsnc simulate SCENARIO [--packets N] [--replications R] [--seed S] ...
    tdsnc verify   SCENARIO ...
    tdsnc curves   SCENARIO ...

Exit codes: 0 success (verify: every verdict passed), 1 usage, 2 scenario
validation, 3 stability, 4 dominance failure.  The output directory defaults
to ``$TDSNC_OUT`` or ``./tdsnc-out``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import StabilityError
from .bounding import BoundError
from .models import ModelError
from .runner import dump_curves, run
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_STABILITY, EXIT_DOMINANCE = 0, 1, 2, 3, 4
OUT_ENV = "TDSNC_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--out", default=None,
                        help=f"output directory (default ${OUT_ENV} or ./tdsnc-out)")
    common.add_argument("--grid-step", type=float, default=None)
    common.add_argument("--horizon", type=float, default=None)
    common.add_argument("--jobs", type=int, default=1, help="parallel replications")

    p = _Parser(prog="tdsnc", description="stochastic network calculus bounds and their check")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analyze", parents=[common], help="compute bounds")
    sim = sub.add_parser("simulate", parents=[common], help="empirical tails only")
    for sp in (sim, sub.add_parser("verify", parents=[common], help="bounds vs simulation")):
        sp.add_argument("--packets", type=int, default=None)
        sp.add_argument("--replications", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
    sub.add_parser("curves", parents=[common], help="dump model curves and bounds as CSV")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or os.environ.get(OUT_ENV) or "tdsnc-out"
    try:
        sc = load_scenario(args.scenario)
        sc = sc.with_overrides(grid_step=args.grid_step, horizon=args.horizon,
                               packets=getattr(args, "packets", None),
                               replications=getattr(args, "replications", None),
                               seed=getattr(args, "seed", None))
        if args.command == "curves":
            for path in dump_curves(sc, out):
                print(path)
            return EXIT_OK
        report = run(sc, args.command, jobs=args.jobs)
    except ScenarioError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StabilityError as exc:
        print(f"stability error: {exc}", file=sys.stderr)
        print(json.dumps(exc.report.to_json()), file=sys.stderr)
        return EXIT_STABILITY
    except (ModelError, BoundError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    path = report.write(out)
    print(path)
    if report.mode == "verify":
        for p in report.properties:
            if p.verdict is not None:
                status = "pass" if p.verdict["passed"] else "FAIL"
                print(f"{status}  {p.prop} {p.target} ({p.verdict['checked_points']} points)")
        return EXIT_OK if report.passed else EXIT_DOMINANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
