"""Command line entry point: ``coopsync CONFIG OUT_DIR [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .baselines import OracleFailure
from .config import ConfigError
from .experiment import _ENGINES, run_experiment

log = logging.getLogger("coopsync")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopsync",
                                description="Run a cooperative localization and synchronization experiment.")
    p.add_argument("config", help="scenario file (YAML, see docs/config.md)")
    p.add_argument("out_dir", help="directory for rmse.csv, cdf.csv, comm.json and trace.csv")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--algorithm", choices=sorted(_ENGINES), help="override the config algorithm")
    p.add_argument("--trials", type=int, help="override the number of Monte-Carlo trials")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return 2
    try:
        result = run_experiment(args.config, args.out_dir, seed=args.seed, algorithm=args.algorithm,
                                trials=args.trials)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    for name, path in result.files.items():
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
