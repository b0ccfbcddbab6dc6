"""Gibbs sampler under the proper Jeffreys prior on the variance pair.

The variances are ``kappa^2`` (noise) and ``tau^2 = upsilon kappa^2``
(prior), with prior density ``(kappa^2 + tau^2)^{-2}``. Given ``x``:

* ``kappa^2 ~ InvGamma((m + n)/2, ||Ax - b||^2/2 + ||Lx||^2/(2 upsilon))``
* ``pi(upsilon | .) = h(upsilon) (upsilon / (1 + upsilon))^2`` with ``h`` the
  ``InvGamma((n + 2)/2, ||Lx||^2/(2 kappa^2))`` density, so an independence
  proposal from ``h`` is accepted with the ratio of the correction factors.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.special import gammaln

from .config import RunConfig
from .core import ChainState, lris_step, mh_accept
from .adaptive import LowRankXStep, RankController
from .gibbs import check_rank, lowrank_pilot, resolve_source
from .runner import ChainSampler, disperse, run_chains


def precisions_from_variances(kappa2: float, upsilon: float) -> tuple[float, float]:
    """``(mu, sigma) = (1/kappa^2, 1/(kappa^2 upsilon))``."""
    return 1.0 / kappa2, 1.0 / (kappa2 * upsilon)


def upsilon_log_accept(upsilon: float, upsilon_star: float) -> float:
    """``2 log[upsilon* (1 + upsilon) / (upsilon (1 + upsilon*))]``."""
    return 2.0 * (np.log(upsilon_star) + np.log1p(upsilon) - np.log(upsilon) - np.log1p(upsilon_star))


def invgamma_logpdf(v: float, shape: float, scale: float) -> float:
    return float(shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(v) - scale / v)


def upsilon_log_target(upsilon: float, lx2: float, kappa2: float, n: int) -> float:
    """Unnormalised ``log pi(upsilon | x, kappa^2)`` from the joint density directly."""
    return float(-0.5 * n * np.log(upsilon) - 2.0 * np.log1p(upsilon) - lx2 / (2.0 * kappa2 * upsilon))


def upsilon_log_accept_full(upsilon, upsilon_star, lx2, kappa2, n) -> float:
    """Same ratio as :func:`upsilon_log_accept` from target and proposal densities."""
    shape, scale = (n + 2) / 2.0, lx2 / (2.0 * kappa2)
    return (upsilon_log_target(upsilon_star, lx2, kappa2, n) - upsilon_log_target(upsilon, lx2, kappa2, n)
            + invgamma_logpdf(upsilon, shape, scale) - invgamma_logpdf(upsilon_star, shape, scale))


def jeffreys_hyper_update(A, L, b, x, kappa2, upsilon, rng):
    """One sweep over ``(kappa^2, upsilon)``; returns ``(kappa2, upsilon, accepted)``."""
    r = A.apply(x) - b
    lx = L.apply_L(x)
    rr, lx2 = float(r @ r), float(lx @ lx)
    m, n = A.rows, A.cols
    kappa2 = 1.0 / rng.gamma((m + n) / 2.0, 1.0 / (0.5 * rr + 0.5 * lx2 / upsilon))
    ups_star = 1.0 / rng.gamma((n + 2) / 2.0, 1.0 / (0.5 * lx2 / kappa2))
    ok = mh_accept(upsilon_log_accept(upsilon, ups_star), rng)
    return float(kappa2), float(ups_star if ok else upsilon), ok


class ProperJeffreysGibbs(ChainSampler):
    hyper_names = ("kappa2", "upsilon")

    def __init__(self, problem, cfg: RunConfig, source, pilot):
        self.p, self.cfg = problem, cfg
        self.xstep = LowRankXStep(problem, RankController(source, cfg.rank, cfg.burn_in))
        self._pilot, self._start_kernel = pilot
        self._logw = 0.0

    def initial_state(self, rng):
        mu, sigma = disperse(*self._pilot, self.cfg.init_spread, rng)
        x0 = self._start_kernel.with_precisions(mu, sigma).sample(rng)
        return ChainState(x0, {"kappa2": 1.0 / mu, "upsilon": mu / sigma})

    def sweep(self, state, rng, t, timer):
        mu, sigma = precisions_from_variances(state.hyper["kappa2"], state.hyper["upsilon"])
        with timer("x_step"):
            with timer("mean"):
                kern = self.xstep.kernel(mu, sigma)
            state = lris_step(kern, state, rng, timer)
        self._logw = kern.log_weight_from_gap(state.gap)
        if self.xstep.observe(state.x_accepted, t):
            state = replace(state, gap=None)
        with timer("hyper"):
            k2, ups, ok = jeffreys_hyper_update(self.p.A, self.p.L, self.p.b, state.x,
                                                state.hyper["kappa2"], state.hyper["upsilon"], rng)
        return replace(state, hyper={"kappa2": k2, "upsilon": ups}, hyper_accepted=ok, iteration=t)

    def report(self, state):
        return state.x, state.hyper["kappa2"], state.hyper["upsilon"], self._logw

    def extras(self):
        return {"rank_schedule": self.xstep.schedule}


def run_proper_jeffreys(problem, cfg: RunConfig, spectrum=None, source=None):
    source = resolve_source(problem, spectrum, source)
    check_rank(cfg, source)
    pilot = lowrank_pilot(problem, source, cfg)
    meta = {"sampler": "proper_jeffreys", "problem": problem.descriptor(), "hyperprior": {"variant": "proper_jeffreys"},
            "chains": cfg.chains, "iterations": cfg.iterations, "burn_in": cfg.burn_in, "stride": cfg.stride,
            "seed": cfg.seed}
    store = run_chains(lambda c: ProperJeffreysGibbs(problem, cfg, source, pilot), cfg, problem.n,
                       hyper_names=ProperJeffreysGibbs.hyper_names, meta=meta)
    store.meta["final_ranks"] = [rec.rank_schedule[-1][1] for rec in store.chains]
    return store
