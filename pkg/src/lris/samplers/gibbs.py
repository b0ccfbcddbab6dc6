"""Gibbs samplers under conjugate Gamma priors: low-rank MH x-step and dense oracle."""

from __future__ import annotations

from dataclasses import replace

from ..lowrank import ExactSource, Spectrum, exact_eig
from ..proposal import build_kernel
from .adaptive import FixedSource, LowRankXStep, RankController
from .config import ConfigError, FixedRank, GammaHyperPrior, RunConfig
from .core import ChainState, DenseConditional, gamma_hyper_update, lris_step
from .runner import ChainSampler, disperse, pilot_precisions, run_chains


def resolve_source(problem, spectrum=None, source=None):
    """Pick the spectrum provider: explicit source, a fixed spectrum, or the dense eigensolve."""
    if source is not None:
        return source
    if spectrum is not None:
        if spectrum.has_tail:
            return ExactSource(spectrum)
        return FixedSource(spectrum)
    return ExactSource(exact_eig(problem.A, problem.L))


def check_rank(cfg: RunConfig, source):
    if cfg.rank is None and not isinstance(source, FixedSource):
        raise ConfigError("run.rank", "rank policy required unless a fixed spectrum is supplied")


def initial_precisions(spec, cfg: RunConfig, pilot, rng):
    """Per-chain starting ``(mu, sigma)``: a dispersed pilot value or a prior draw."""
    if cfg.init == "prior" and isinstance(spec, GammaHyperPrior):
        return float(rng.gamma(spec.a_mu, 1.0 / spec.b_mu)), float(rng.gamma(spec.a_sigma, 1.0 / spec.b_sigma))
    return disperse(*pilot, cfg.init_spread, rng)


class LRISGibbs(ChainSampler):
    """x by low-rank independence MH, then ``(mu, sigma)`` from their Gamma conditionals."""

    def __init__(self, problem, spec: GammaHyperPrior, cfg: RunConfig, source, pilot=None):
        self.p, self.spec, self.cfg = problem, spec, cfg
        self.xstep = LowRankXStep(problem, RankController(source, cfg.rank, cfg.burn_in))
        self._pilot, self._start_kernel = pilot
        self._logw = 0.0

    def initial_state(self, rng):
        mu, sigma = initial_precisions(self.spec, self.cfg, self._pilot, rng)
        x0 = self._start_kernel.with_precisions(mu, sigma).sample(rng)
        return ChainState(x0, {"mu": mu, "sigma": sigma})

    def sweep(self, state, rng, t, timer):
        mu, sigma = state.hyper["mu"], state.hyper["sigma"]
        with timer("x_step"):
            with timer("mean"):
                kern = self.xstep.kernel(mu, sigma)
            state = lris_step(kern, state, rng, timer)
        self._logw = kern.log_weight_from_gap(state.gap)
        if self.xstep.observe(state.x_accepted, t):
            state = replace(state, gap=None)
        with timer("hyper"):
            hyper = gamma_hyper_update(self.p.A, self.p.L, self.p.b, state.x, self.spec, rng)
        return replace(state, hyper=hyper, iteration=t)

    def report(self, state):
        return state.x, state.hyper["mu"], state.hyper["sigma"], self._logw

    def extras(self):
        return {"rank_schedule": self.xstep.schedule}


class BlockGibbs(ChainSampler):
    """x drawn exactly from its Gaussian conditional by dense Cholesky."""

    def __init__(self, problem, spec: GammaHyperPrior, cfg: RunConfig, dense: DenseConditional, pilot=None):
        self.p, self.spec, self.cfg, self.dense = problem, spec, cfg, dense
        self._pilot = pilot

    def initial_state(self, rng):
        mu, sigma = initial_precisions(self.spec, self.cfg, self._pilot, rng)
        return ChainState(self.dense.sample(mu, sigma, rng), {"mu": mu, "sigma": sigma})

    def sweep(self, state, rng, t, timer):
        with timer("x_step"):
            x = self.dense.sample(state.hyper["mu"], state.hyper["sigma"], rng, timer=timer)
        with timer("hyper"):
            hyper = gamma_hyper_update(self.p.A, self.p.L, self.p.b, x, self.spec, rng)
        return replace(state, x=x, hyper=hyper, iteration=t, x_accepted=True)

    def report(self, state):
        return state.x, state.hyper["mu"], state.hyper["sigma"], 0.0


def _meta(problem, name, spec, cfg, **extra):
    return {"sampler": name, "problem": problem.descriptor(), "hyperprior": spec.__dict__ | {"variant": spec.variant},
            "chains": cfg.chains, "iterations": cfg.iterations, "burn_in": cfg.burn_in, "stride": cfg.stride,
            "seed": cfg.seed, **extra}


def pilot_spectrum(source, cfg: RunConfig) -> Spectrum:
    """Spectrum used for the starting-point pilot: everything cheap, else the initial rank."""
    if isinstance(source, (ExactSource, FixedSource)):
        return source.full
    k = cfg.rank.k if isinstance(cfg.rank, FixedRank) else cfg.rank.k_init
    return source.spectrum(max(k, 1))


def lowrank_pilot(problem, source, cfg: RunConfig):
    """Pilot precisions and the kernel used for the first ``x`` draw.

    Starting ``x`` from the pilot spectrum (the full one when it is cheap)
    rather than from the initial-rank proposal avoids a long transient in
    which a poor ``x`` drags the noise precision towards zero.
    """
    base = build_kernel(problem.A, problem.L, problem.b, pilot_spectrum(source, cfg), 1.0, 1.0)
    return pilot_precisions(problem, lambda m, s: base.with_precisions(m, s).mean()), base


def run_lris_gibbs(problem, spec: GammaHyperPrior, cfg: RunConfig, spectrum: Spectrum | None = None,
                   source=None):
    """Metropolis-within-Gibbs with the low-rank independence proposal for ``x``."""
    source = resolve_source(problem, spectrum, source)
    check_rank(cfg, source)
    pilot = lowrank_pilot(problem, source, cfg)
    store = run_chains(lambda c: LRISGibbs(problem, spec, cfg, source, pilot), cfg, problem.n,
                       meta=_meta(problem, "lris_gibbs", spec, cfg))
    store.meta["final_ranks"] = [rec.rank_schedule[-1][1] for rec in store.chains]
    return store


def run_block_gibbs(problem, spec: GammaHyperPrior, cfg: RunConfig, dense: DenseConditional | None = None):
    """Standard two-block Gibbs sampler with an exact dense x-draw."""
    dense = dense or DenseConditional(problem.A, problem.L, problem.b)
    pilot = pilot_precisions(problem, dense.mean)
    return run_chains(lambda c: BlockGibbs(problem, spec, cfg, dense, pilot), cfg, problem.n,
                      meta=_meta(problem, "block_gibbs", spec, cfg))
