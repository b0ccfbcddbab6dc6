"""Command line entry point: ``lris run <config>`` and ``lris verify <config>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .io import load_config, run_to_directory
from .samplers import ConfigError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lris", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the configured sampler and write outputs"),
                        ("verify", "check the proposal against the closed-form theory (dense, small n)")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", type=Path)
        s.add_argument("--output-dir", type=Path, default=None)
        s.add_argument("--seed-override", type=int, default=None)
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(spec, args):
    run = spec.run
    if args.seed_override is not None:
        run = replace(run, seed=args.seed_override)
    if args.threads is not None:
        run = replace(run, threads=args.threads)
    spec.run = run
    return spec


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            out = args.output_dir or spec.output_dir or args.config.with_suffix("").with_name(
                args.config.stem + "_out")
            path = run_to_directory(spec, out)
            print(f"wrote {path}")
            return 0
        from .verify import verify

        checks = verify(spec)
        for c in checks:
            print(c.line())
        ok = all(c.passed for c in checks)
        print("verify: all checks passed" if ok else "verify: FAILED")
        return 0 if ok else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
