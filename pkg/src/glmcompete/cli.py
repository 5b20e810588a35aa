"""Command line entry point: ``glmcompete {run,scaling,validate,lemmas}``.

Exit codes: 0 success, 1 a lemma check failed, 2 bad config or arguments,
3 the market fails a modelling check (override with ``--force``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment
from .config import ConfigError, load_config
from .market import MarketError, validate_market

EXIT_OK = 0
EXIT_LEMMA_FAILED = 1
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3

log = logging.getLogger("glmcompete")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glmcompete", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate every seed and write trajectories and a summary")
    run.add_argument("config")
    run.add_argument("--out", required=True)
    run.add_argument("--force", action="store_true", help="run even if the market fails validation")
    run.add_argument("--seeds", type=int, default=None, metavar="K", help="use only the first K seeds")
    run.add_argument("--workers", type=int, default=None,
                     help=f"worker processes (default ${experiment.WORKERS_ENV} or 1)")

    sc = sub.add_parser("scaling", help="regret-vs-horizon study over the horizon ladder")
    sc.add_argument("config")
    sc.add_argument("--out", required=True)
    sc.add_argument("--force", action="store_true")
    sc.add_argument("--workers", type=int, default=None)

    va = sub.add_parser("validate", help="check the market and print the report")
    va.add_argument("config")

    le = sub.add_parser("lemmas", help="run the numerical lemma checks")
    le.add_argument("config")
    le.add_argument("--out", required=True)
    le.add_argument("--workers", type=int, default=None)
    return ap


def _print_json(obj) -> None:
    print(experiment._dumps(obj), end="")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            report = validate_market(cfg.market, cfg.experiment.validation_grid)
            _print_json(report.to_dict())
            for msg in report.messages:
                print(msg, file=sys.stderr)
            return EXIT_OK if report.ok else EXIT_ASSUMPTION
        if args.command == "run":
            summary = experiment.run_experiment(cfg, args.out, args.force, args.seeds, args.workers)
            print(f"wrote {len(summary['seeds'])} trajectories to {args.out}; "
                  f"mean regret {[round(v, 4) for v in summary['regret_mean'].tolist()]}")
            return EXIT_OK
        if args.command == "scaling":
            res = experiment.regret_scaling_study(cfg, args.out, args.force, args.workers)
            lo, hi = res["slope_ci"]
            print(f"slope {res['slope']:.4f} (95% CI {lo:.4f} .. {hi:.4f})")
            return EXIT_OK
        if args.command == "lemmas":
            reports = experiment.run_lemma_suite(cfg, args.out, args.workers)
            failed = [r for r in reports if not r.passed]
            for r in reports:
                print(f"{'PASS' if r.passed else 'FAIL'} {r.lemma}: {r.instance} "
                      f"(lhs {r.lhs:.6g}, rhs {r.rhs:.6g}, tol {r.tolerance:.3g})")
            return EXIT_LEMMA_FAILED if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except experiment.AssumptionViolation as exc:
        print(f"{exc}\nrerun with --force to continue anyway", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (MarketError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
