"""``filterlab <experiment> [--config FILE] [--out DIR] [--seed S] [--threads T]``.

Exit status is 0 when every criterion of the run passes, 1 when one fails
and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigurationError, CriterionFailed, InvalidArgument
from .config import EXPERIMENTS, load_config
from .experiments import EXPERIMENT_FUNCS, exp_equivalence


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filterlab", description="Run a seeded filtering experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML file layered over the experiment defaults")
    p.add_argument("--out", help="directory for summary.json and artifacts")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    p.add_argument("--resample", action="store_true",
                   help="filter only: systematic resampling demo (leaves the exact recursion)")
    p.add_argument("--strict", action="store_true",
                   help="equivalence only: stop at the first mismatch")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    overrides = {"seed": args.seed, "threads": args.threads}
    if args.resample:
        overrides["resample"] = True
    try:
        cfg = load_config(args.experiment, args.config, overrides)
        if args.experiment == "equivalence":
            record = exp_equivalence(cfg, args.out, strict=args.strict)
        else:
            record = EXPERIMENT_FUNCS[args.experiment](cfg, args.out)
    except (ConfigurationError, InvalidArgument) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CriterionFailed as exc:
        print(f"criterion failed: {exc}", file=sys.stderr)
        return 1
    if not record.criteria:
        print(f"[DONE] {args.experiment}: no acceptance criteria in this run")
    for cid, c in record.criteria.items():
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {args.experiment} criterion {cid}")
    return 0 if record.passed else 1


if __name__ == "__main__":
    sys.exit(main())
