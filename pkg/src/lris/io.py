"""Run configuration files and output directories.

A config is a YAML mapping with these blocks (see ``configs/`` for examples)::

    problem:  kind, params (n | side, psf_std | m, n, seed), noise_level, noise_seed
    prior:    kind (laplacian | gp | identity), shift, length, jitter
    sampler:  name (lris_gibbs | block_gibbs | proper_jeffreys | ncp), hyperprior {...}
    lowrank:  method (exact | randomized | single_pass | residual | file), rank,
              oversampling, seed, tolerance, max_rank, spectrum_file
    run:      iterations, burn_in, stride, chains, seed, timing, store_x, init,
              init_spread, threads, adaptive_rank {target_accept, window, k_init, k_inc, max_rank}
    theory:   enabled, steps
    output:   dir
"""

from __future__ import annotations

import json
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .diagnostics import summarize_store
from .lowrank import (
    DENSE_CAP,
    AdaptiveConfig,
    ExactSource,
    SketchConfig,
    SketchSource,
    adaptive_eig,
    exact_eig,
    load_spectrum,
    save_spectrum,
)
from .problems import KINDS, make_problem
from .proposal import build_kernel
from .samplers import (
    AdaptiveRank,
    ConfigError,
    FixedRank,
    FixedSource,
    GammaHyperPrior,
    NCPGammaHyperPrior,
    RunConfig,
    run_block_gibbs,
    run_lris_gibbs,
    run_ncp,
    run_proper_jeffreys,
)
from .theory import TheoryError, theory_report

SAMPLERS = ("lris_gibbs", "block_gibbs", "proper_jeffreys", "ncp")
LOWRANK_METHODS = ("exact", "randomized", "single_pass", "residual", "file")
BLOCKS = ("problem", "prior", "sampler", "lowrank", "run", "theory", "output")


@dataclass
class RunSpec:
    problem: dict
    prior: dict
    sampler: str
    hyperprior: object
    lowrank: dict
    run: RunConfig
    theory: dict
    output_dir: Path | None
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


# -- parsing -----------------------------------------------------------------


def _block(raw: dict, name: str, required: bool = False) -> dict:
    val = raw.get(name)
    if val is None:
        if required:
            raise ConfigError(name, "missing block")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(name, f"expected a mapping, got {type(val).__name__}")
    return dict(val)


def _take(block: dict, path: str, key: str, kind, default=None, required=False):
    if key not in block:
        if required:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return default
    val = block.pop(key)
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or (isinstance(val, bool) and kind is not bool):
        raise ConfigError(f"{path}.{key}", f"expected {kind.__name__}, got {val!r}")
    return val


def _no_extra(block: dict, path: str):
    if block:
        raise ConfigError(f"{path}.{sorted(block)[0]}", "unknown field")


def _hyperprior(name: str, block: dict):
    path = "sampler.hyperprior"
    if name == "proper_jeffreys":
        _no_extra(block, path)
        return None
    kw = {k: _take(block, path, k, float, 0.1) for k in ("a_mu", "b_mu", "a_sigma", "b_sigma")}
    for k, v in kw.items():
        if not v > 0:
            raise ConfigError(f"{path}.{k}", f"must be positive, got {v}")
    if name == "ncp":
        kw["sigma_update"] = _take(block, path, "sigma_update", str, "adaptive_rw")
        kw["rw_scale0"] = _take(block, path, "rw_scale0", float, 1.0)
        _no_extra(block, path)
        return NCPGammaHyperPrior(**kw)
    _no_extra(block, path)
    return GammaHyperPrior(**kw)


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunSpec:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in raw:
        if key not in BLOCKS:
            raise ConfigError(str(key), "unknown block")

    prob = _block(raw, "problem", required=True)
    kind = _take(prob, "problem", "kind", str, required=True)
    if kind not in KINDS:
        raise ConfigError("problem.kind", f"unknown kind {kind!r}; expected one of {KINDS}")
    params = _take(prob, "problem", "params", dict, {})
    problem = {
        "kind": kind,
        "params": params,
        "noise_level": _take(prob, "problem", "noise_level", float, 0.01),
        "noise_seed": _take(prob, "problem", "noise_seed", int, 0),
    }
    if problem["noise_level"] < 0:
        raise ConfigError("problem.noise_level", "must be nonnegative")
    _no_extra(prob, "problem")

    prior = _block(raw, "prior")
    pkind = prior.get("kind", "laplacian")
    if pkind not in ("laplacian", "gp", "identity"):
        raise ConfigError("prior.kind", f"unknown prior kind {pkind!r}")
    for k in prior:
        if k not in ("kind", "shift", "length", "jitter"):
            raise ConfigError(f"prior.{k}", "unknown field")

    samp = _block(raw, "sampler", required=True)
    name = _take(samp, "sampler", "name", str, required=True)
    if name not in SAMPLERS:
        raise ConfigError("sampler.name", f"unknown sampler {name!r}; expected one of {SAMPLERS}")
    hyper = _hyperprior(name, _take(samp, "sampler", "hyperprior", dict, {}))
    _no_extra(samp, "sampler")

    lr = _block(raw, "lowrank")
    method = _take(lr, "lowrank", "method", str, "exact")
    if method not in LOWRANK_METHODS:
        raise ConfigError("lowrank.method", f"unknown method {method!r}; expected one of {LOWRANK_METHODS}")
    lowrank = {
        "method": method,
        "rank": _take(lr, "lowrank", "rank", int, None),
        "oversampling": _take(lr, "lowrank", "oversampling", int, 10),
        "seed": _take(lr, "lowrank", "seed", int, 0),
        "tolerance": _take(lr, "lowrank", "tolerance", float, None),
        "max_rank": _take(lr, "lowrank", "max_rank", int, 200),
        "spectrum_file": _take(lr, "lowrank", "spectrum_file", str, None),
    }
    _no_extra(lr, "lowrank")
    if method == "file" and not lowrank["spectrum_file"]:
        raise ConfigError("lowrank.spectrum_file", "required when method is 'file'")
    if method == "residual" and lowrank["tolerance"] is None:
        raise ConfigError("lowrank.tolerance", "required when method is 'residual'")

    rb = _block(raw, "run", required=True)
    ad = _take(rb, "run", "adaptive_rank", dict, None)
    if ad is not None:
        rank = AdaptiveRank(
            target_accept=_take(ad, "run.adaptive_rank", "target_accept", float, 0.95),
            window=_take(ad, "run.adaptive_rank", "window", int, 100),
            k_init=_take(ad, "run.adaptive_rank", "k_init", int, 1),
            k_inc=_take(ad, "run.adaptive_rank", "k_inc", int, 2),
            max_rank=_take(ad, "run.adaptive_rank", "max_rank", int, None),
        )
        _no_extra(ad, "run.adaptive_rank")
    elif name == "block_gibbs" or method in ("file", "residual"):
        rank = None
    elif lowrank["rank"] is None:
        raise ConfigError("lowrank.rank", "required unless run.adaptive_rank is given")
    else:
        rank = FixedRank(lowrank["rank"])
    run = RunConfig(
        iterations=_take(rb, "run", "iterations", int, required=True),
        burn_in=_take(rb, "run", "burn_in", int, 0),
        stride=_take(rb, "run", "stride", int, 1),
        chains=_take(rb, "run", "chains", int, 1),
        seed=_take(rb, "run", "seed", int, 0),
        rank=rank,
        timing=_take(rb, "run", "timing", bool, True),
        store_x=_take(rb, "run", "store_x", str, "thinned"),
        record_burn_in=_take(rb, "run", "record_burn_in", bool, False),
        init=_take(rb, "run", "init", str, "dispersed"),
        init_spread=_take(rb, "run", "init_spread", float, 1.0),
        threads=_take(rb, "run", "threads", int, 1),
    )
    _no_extra(rb, "run")

    th = _block(raw, "theory")
    theory = {"enabled": _take(th, "theory", "enabled", bool, False),
              "steps": _take(th, "theory", "steps", list, [1, 2, 5, 10, 20, 50, 100])}
    _no_extra(th, "theory")
    out = _block(raw, "output")
    out_dir = _take(out, "output", "dir", str, None)
    _no_extra(out, "output")
    return RunSpec(problem, dict(prior), name, hyper, lowrank, run, theory,
                   None if out_dir is None else Path(out_dir), raw, base_dir)


def load_config(path) -> RunSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    spec = parse_config(raw, path.parent)
    if spec.lowrank.get("spectrum_file"):
        f = Path(spec.lowrank["spectrum_file"])
        spec.lowrank["spectrum_file"] = str(f if f.is_absolute() else path.parent / f)
    if spec.output_dir is not None and not spec.output_dir.is_absolute():
        spec.output_dir = path.parent / spec.output_dir
    return spec


# -- execution ---------------------------------------------------------------


def build_problem(spec: RunSpec):
    pr = spec.problem
    return make_problem(pr["kind"], pr["params"], pr["noise_level"], pr["noise_seed"], spec.prior or None)


def build_source(spec: RunSpec, problem):
    """Spectrum provider for the configured low-rank method."""
    lr = spec.lowrank
    method = lr["method"]
    if method == "exact":
        return ExactSource(exact_eig(problem.A, problem.L))
    if method in ("randomized", "single_pass"):
        mode = "two_pass" if method == "randomized" else "single_pass"
        return SketchSource(problem.A, problem.L, oversampling=lr["oversampling"], seed=lr["seed"], mode=mode)
    if method == "residual":
        cfg = SketchConfig(rank=0, oversampling=lr["oversampling"], seed=lr["seed"],
                           adaptive=AdaptiveConfig(tolerance=lr["tolerance"], max_rank=lr["max_rank"]))
        return FixedSource(adaptive_eig(problem.A, problem.L, cfg))
    spectrum = load_spectrum(lr["spectrum_file"])
    if spectrum.n != problem.n:
        raise ConfigError("lowrank.spectrum_file", f"spectrum has n={spectrum.n}, problem has n={problem.n}")
    return FixedSource(spectrum)


def execute(spec: RunSpec):
    """Run the configured sampler; returns ``(problem, store, source)``."""
    problem = build_problem(spec)
    if spec.sampler == "block_gibbs":
        return problem, run_block_gibbs(problem, spec.hyperprior, spec.run), None
    source = build_source(spec, problem)
    if spec.sampler == "lris_gibbs":
        store = run_lris_gibbs(problem, spec.hyperprior, spec.run, source=source)
    elif spec.sampler == "proper_jeffreys":
        store = run_proper_jeffreys(problem, spec.run, source=source)
    else:
        store = run_ncp(problem, spec.hyperprior, spec.run, source=source)
    return problem, store, source


def _final_precisions(spec: RunSpec, store):
    h1 = float(np.mean(np.concatenate(store.series(store.hyper_names[0]))))
    h2 = float(np.mean(np.concatenate(store.series(store.hyper_names[1]))))
    if spec.sampler == "proper_jeffreys":
        return 1.0 / h1, 1.0 / (h1 * h2)
    return h1, h2


def theory_section(spec: RunSpec, problem, store, source) -> dict | None:
    """Theory report at the posterior-mean state and final rank (needs the dense oracle)."""
    if not spec.theory["enabled"] or source is None:
        return None
    if problem.n > DENSE_CAP:
        return {"skipped": f"n={problem.n} exceeds the dense cap"}
    k = store.meta["final_ranks"][0]
    full = source.full if isinstance(source, ExactSource) else exact_eig(problem.A, problem.L)
    mu, sigma = _final_precisions(spec, store)
    x = store.merged_x_mean()
    spectrum = full.truncate(k)
    if spec.sampler == "ncp":
        kern = build_kernel(problem.A, problem.L, problem.b, spectrum, mu / sigma, 1.0, np.sqrt(sigma))
        x = np.sqrt(sigma) * x
    else:
        kern = build_kernel(problem.A, problem.L, problem.b, spectrum, mu, sigma)
    p = spec.lowrank["oversampling"] if spec.lowrank["method"] in ("randomized", "single_pass") else None
    try:
        rep = theory_report(kern, x, steps=tuple(spec.theory["steps"]), oversampling=p)
    except TheoryError as exc:
        return {"skipped": str(exc)}
    out = rep.to_dict()
    out["state"] = {"mu": mu, "sigma": sigma, "rank": k, "x": "merged posterior mean"}
    return out


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def build_summary(spec: RunSpec, problem, store, source) -> dict:
    diag = summarize_store(store, x_true=problem.x_true)
    spectrum_info = None
    if source is not None:
        k = store.meta["final_ranks"][0]
        sp = source.spectrum(k)
        spectrum_info = {"source": sp.source, "rank": sp.rank, "residual_estimate": sp.residual_estimate,
                         "converged": sp.converged}
    return _clean({
        "version": __version__,
        "sampler": spec.sampler,
        "problem": problem.descriptor(),
        "config": spec.raw,
        "seeds": {"run": spec.run.seed, "chains": [rec.seed_entropy for rec in store.chains],
                  "noise": spec.problem["noise_seed"], "sketch": spec.lowrank["seed"]},
        "acceptance_rate": store.acceptance_rate(),
        "hyper_acceptance_rate": store.hyper_acceptance_rate(),
        "diagnostics": diag.to_dict(),
        "theory": theory_section(spec, problem, store, source),
        "timings_ns": {"total": store.timings(), "per_chain": [rec.timings_ns for rec in store.chains]},
        "wall_seconds": store.meta.get("wall_seconds"),
        "rank_schedules": [rec.rank_schedule for rec in store.chains],
        "rw_scale_traces": [rec.rw_scale_trace for rec in store.chains],
        "spectrum": spectrum_info,
    })


def write_outputs(outdir: Path, spec: RunSpec, problem, store, source) -> list:
    """Write every output file into ``outdir``; returns the file names."""
    store.save(outdir)
    files = ["chains.csv", "x_mean.bin", "x_sumsq.bin", "store.json"]
    if (outdir / "x_series.npy").exists():
        files.append("x_series.npy")
    if source is not None:
        save_spectrum(source.spectrum(store.meta["final_ranks"][0]), outdir / "spectrum.bin")
        files.append("spectrum.bin")
    summary = build_summary(spec, problem, store, source)
    files.append("summary.json")
    summary["files"] = sorted(files)
    (outdir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, allow_nan=False))
    return files


def run_to_directory(spec: RunSpec, outdir: Path) -> Path:
    """Execute and publish outputs atomically: a failed run leaves nothing behind."""
    outdir = Path(outdir)
    outdir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{outdir.name}.partial-", dir=outdir.parent))
    try:
        problem, store, source = execute(spec)
        write_outputs(tmp, spec, problem, store, source)
        if outdir.exists():
            shutil.rmtree(outdir)
        tmp.rename(outdir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return outdir

