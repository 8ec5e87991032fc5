"""``lab <experiment> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .errors import LabError, ResolutionError
from .report import reference_page, write_report

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RESOLUTION = 0, 1, 2, 3

log = logging.getLogger("gplab")


def _split_overrides(tokens: list) -> dict:
    """``['--a', '1', '--b=2']`` -> ``{'a': '1', 'b': '2'}``."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise LabError(f"unexpected argument {tok!r}; parameters are given as --key value")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(tokens):
                raise LabError(f"flag --{key} needs a value")
            value = tokens[i + 1]
            i += 1
        out[key] = value
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lab",
        allow_abbrev=False,
        description="Numerical experiments on dispersive estimates for the hierarchy on rectangular tori.",
        epilog="Any configuration key may be passed as --key value; see --reference.",
    )
    p.add_argument("experiment", nargs="?", help="one of: " + ", ".join(sorted(experiments.REGISTRY)))
    p.add_argument("--config", metavar="FILE", help="key-value file with [common] and per-experiment sections")
    p.add_argument("--reference", action="store_true", help="print every configuration key and exit")
    p.add_argument("--list", action="store_true", help="list the experiments and exit")
    p.add_argument("--stamp", help="file-name stamp (default: SOURCE_DATE_EPOCH or current UTC time)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.reference:
        sys.stdout.write(reference_page(experiments.REGISTRY))
        return EXIT_PASS
    if args.list:
        for name in sorted(experiments.REGISTRY):
            print(f"{name:20s} {experiments.REGISTRY[name].doc}")
        return EXIT_PASS
    if not args.experiment:
        parser.print_usage(sys.stderr)
        print("lab: error: an experiment name is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        overrides = _split_overrides(rest)
        cfg = experiments.configure(args.experiment, args.config, overrides)
        for note in cfg.notices:
            print(f"notice: {note}", file=sys.stderr)
        report = experiments.run(cfg)
    except ResolutionError as exc:
        print(f"lab: resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (LabError, ValueError) as exc:
        print(f"lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    paths = write_report(report, args.stamp)
    for name, ok in sorted(report.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if report.fit:
        print("fit: " + ", ".join(f"{k}={v:.6g}" for k, v in report.fit.items()))
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
