"""Run the validation studies and write their metrics as JSON.

Examples::

    python scripts/run_studies.py --list
    python scripts/run_studies.py ratio moments --out results.json
    python scripts/run_studies.py all --quick
    python scripts/run_studies.py mixing --set replicates=10 --set iterations=1000
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lris import experiments as ex


@dataclass(frozen=True)
class StudyPlan:
    key: str
    run: Callable
    quick: dict = field(default_factory=dict)


PLANS = [
    StudyPlan("exact_rank", ex.exact_rank_study, {"iterations": 1000}),
    StudyPlan("ratio", ex.ratio_equality_study, {"pairs": 100}),
    StudyPlan("moments", ex.moment_study, {"proposals": 20_000}),
    StudyPlan("envelope", ex.envelope_study, {"accepted": 2000}),
    StudyPlan("equivalence", ex.equivalence_study, {"side": 16, "iterations": 1500, "burn_in": 300}),
    StudyPlan("scaling", ex.scaling_study, {"sides": (8, 16, 24), "iterations": 20, "fixed_rank": 20}),
    StudyPlan("sketch_bound", ex.sketch_bound_study, {"seeds": 40}),
    StudyPlan("adaptive_rank", ex.adaptive_rank_study, {"burn_in": 1000, "iterations": 1200}),
    StudyPlan("mixing", ex.mixing_study, {"ranks": (1, 3, 5, 7, 9), "replicates": 5, "iterations": 600,
                                          "burn_in": 200, "oracle_iterations": 2000}),
    StudyPlan("jeffreys", ex.jeffreys_study, {"side": 16, "max_iterations": 3000, "checkpoints": (1500, 3000)}),
    StudyPlan("ncp", ex.ncp_study, {"side": 8, "iterations": 1500, "burn_in": 300}),
]
BY_KEY = {p.key: p for p in PLANS}


def _value(text: str):
    """Parse ``--set`` values: JSON where possible, else the raw string."""
    try:
        val = json.loads(text)
    except json.JSONDecodeError:
        return text
    return tuple(val) if isinstance(val, list) else val


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("studies", nargs="*", help="study keys, or 'all'")
    ap.add_argument("--list", action="store_true", help="list study keys and exit")
    ap.add_argument("--quick", action="store_true", help="reduced sizes for a fast look (checks may not be meaningful)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a study keyword argument (applies to every selected study)")
    ap.add_argument("--out", default=None, help="write metrics JSON here")
    args = ap.parse_args(argv)
    if args.list or not args.studies:
        for p in PLANS:
            print(f"{p.key:14s} {p.run.__doc__.strip().splitlines()[0] if p.run.__doc__ else ''}")
        return 0
    keys = [p.key for p in PLANS] if args.studies == ["all"] else args.studies
    unknown = [k for k in keys if k not in BY_KEY]
    if unknown:
        ap.error(f"unknown study {unknown[0]!r}; use --list")
    overrides = {}
    for item in args.set:
        k, _, v = item.partition("=")
        overrides[k] = _value(v)
    results, ok = {}, True
    for key in keys:
        plan = BY_KEY[key]
        kw = dict(plan.quick) if args.quick else {}
        kw.update(overrides)
        if args.seed is not None:
            kw["seed"] = args.seed
        res = plan.run(**kw)
        print(res.line(), flush=True)
        ok &= res.passed
        results[key] = {"name": res.name, "passed": res.passed, "seconds": res.seconds, "kwargs": kw,
                        "checks": res.checks, "metrics": res.metrics}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(_jsonable(results), fh, indent=1)
        print(f"wrote {args.out}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
