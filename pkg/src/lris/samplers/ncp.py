"""Noncentred Gibbs sampler: ``x = sigma^{-1/2} z`` with ``z ~ N(0, (L^T L)^{-1})`` a priori.

Given ``(mu, sigma)`` the conditional of ``z`` is Gaussian with precision
``(mu/sigma) A^T A + L^T L``, so the low-rank proposal is reused with
precisions ``(mu/sigma, 1)`` and data scale ``sqrt(sigma)``. ``sigma`` is
updated either by an adaptive random walk on ``omega = log sigma`` or by an
independence proposal on ``zeta = sigma^{-1/2}`` drawn from the truncated
Gaussian that matches the likelihood in ``zeta``.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
from scipy.stats import truncnorm

from .adaptive import LowRankXStep, RankController
from .config import NCPGammaHyperPrior, RunConfig
from .core import ChainState, lris_step, mh_accept
from .gibbs import check_rank, lowrank_pilot, resolve_source
from .runner import ChainSampler, disperse, run_chains

log = logging.getLogger(__name__)

ADAPT_WINDOW = 100
ADAPT_LOW, ADAPT_HIGH = 0.35, 0.5
SHRINK, GROW = 0.75, 1.75


def adapt_scale(c: float, accept_rate: float) -> float:
    """Random-walk variance update applied at the end of each burn-in window."""
    if accept_rate < ADAPT_LOW:
        return c * SHRINK
    if accept_rate > ADAPT_HIGH:
        return c * GROW
    return c


def _misfit(s: float, az2: float, azb: float, bb: float) -> float:
    """``||s A z - b||^2`` from the three inner products."""
    return s * s * az2 - 2.0 * s * azb + bb


def log_sigma_target(omega: float, mu: float, az2: float, azb: float, bb: float, a: float, b: float) -> float:
    """``log p(omega | z, mu)`` up to a constant; includes the ``e^omega`` Jacobian."""
    return a * omega - b * np.exp(omega) - 0.5 * mu * _misfit(np.exp(-0.5 * omega), az2, azb, bb)


def zeta_log_prior(zeta: float, a: float, b: float) -> float:
    """Gamma(a, b) prior on ``sigma`` pushed to ``zeta = sigma^{-1/2}``: ``zeta^{-2a-1} exp(-b/zeta^2)``."""
    return -(2.0 * a + 1.0) * np.log(zeta) - b / (zeta * zeta)


def trunc_gauss_params(mu: float, az2: float, azb: float) -> tuple[float, float]:
    """Mean ``zeta_c`` and variance ``xi_c`` of the untruncated Gaussian."""
    return azb / az2, 1.0 / (mu * az2)


def trunc_gauss_logpdf(zeta, center: float, var: float):
    sd = np.sqrt(var)
    return truncnorm.logpdf(zeta, -center / sd, np.inf, loc=center, scale=sd)


def trunc_gauss_draw(center: float, var: float, rng) -> float:
    sd = np.sqrt(var)
    return float(truncnorm.rvs(-center / sd, np.inf, loc=center, scale=sd, random_state=rng))


class NCPGibbs(ChainSampler):
    def __init__(self, problem, spec: NCPGammaHyperPrior, cfg: RunConfig, source, pilot):
        self.p, self.spec, self.cfg = problem, spec, cfg
        self.xstep = LowRankXStep(problem, RankController(source, cfg.rank, cfg.burn_in))
        self._pilot, self._start_kernel = pilot
        self._bb = float(problem.b @ problem.b)
        self._logw = 0.0
        self._win_acc = 0
        self._win_seen = 0
        self.scale_trace: list = []
        self.scales_after_burn_in: set = set()
        self.fallbacks = 0

    def kernel(self, mu, sigma):
        return self.xstep.kernel(mu / sigma, 1.0, np.sqrt(sigma))

    def initial_state(self, rng):
        mu, sigma = disperse(*self._pilot, self.cfg.init_spread, rng)
        z0 = self._start_kernel.with_precisions(mu / sigma, 1.0, np.sqrt(sigma)).sample(rng)
        self.scale_trace.append((0, self.spec.rw_scale0))
        return ChainState(z0, {"mu": mu, "sigma": sigma}, rw_scale=self.spec.rw_scale0)

    def _rw_step(self, sigma, mu, c, inner, rng):
        az2, azb = inner
        a, b = self.spec.a_sigma, self.spec.b_sigma
        w = np.log(sigma)
        w_star = w + np.sqrt(c) * rng.standard_normal()
        lr = log_sigma_target(w_star, mu, az2, azb, self._bb, a, b) - log_sigma_target(w, mu, az2, azb, self._bb, a, b)
        ok = mh_accept(lr, rng)
        return (float(np.exp(w_star)) if ok else sigma), ok

    def _tg_step(self, sigma, mu, inner, rng):
        az2, azb = inner
        a, b = self.spec.a_sigma, self.spec.b_sigma
        center, var = trunc_gauss_params(mu, az2, azb)
        zeta = 1.0 / np.sqrt(sigma)
        zeta_star = trunc_gauss_draw(center, var, rng)
        ok = zeta_star > 0 and mh_accept(zeta_log_prior(zeta_star, a, b) - zeta_log_prior(zeta, a, b), rng)
        return (float(zeta_star ** -2) if ok else sigma), ok

    def sweep(self, state, rng, t, timer):
        mu, sigma = state.hyper["mu"], state.hyper["sigma"]
        with timer("x_step"):
            with timer("mean"):
                kern = self.kernel(mu, sigma)
            state = lris_step(kern, state, rng, timer)
        self._logw = kern.log_weight_from_gap(state.gap)
        if self.xstep.observe(state.x_accepted, t):
            state = replace(state, gap=None)
        with timer("hyper"):
            az = self.p.A.apply(state.x)
            az2, azb = float(az @ az), float(az @ self.p.b)
            s = 1.0 / np.sqrt(sigma)
            rate = 0.5 * _misfit(s, az2, azb, self._bb) + self.spec.b_mu
            mu = float(rng.gamma(self.p.m / 2 + self.spec.a_mu, 1.0 / rate))
            c = state.rw_scale
            if self.spec.sigma_update == "trunc_gauss_independence" and az2 > 0:
                sigma, ok = self._tg_step(sigma, mu, (az2, azb), rng)
            else:
                if self.spec.sigma_update == "trunc_gauss_independence":
                    self.fallbacks += 1
                    log.info("A z = 0 at iteration %d; random-walk sigma update used", t)
                sigma, ok = self._rw_step(sigma, mu, c, (az2, azb), rng)
        if self.spec.sigma_update == "adaptive_rw" and t <= self.cfg.burn_in:
            self._win_acc += int(ok)
            self._win_seen += 1
            if t % ADAPT_WINDOW == 0:
                c = adapt_scale(c, self._win_acc / self._win_seen)
                self._win_acc = self._win_seen = 0
                self.scale_trace.append((t, c))
        elif t > self.cfg.burn_in:
            self.scales_after_burn_in.add(c)
        return replace(state, hyper={"mu": mu, "sigma": sigma}, hyper_accepted=bool(ok), rw_scale=c, iteration=t)

    def report(self, state):
        x = state.x / np.sqrt(state.hyper["sigma"])
        return x, state.hyper["mu"], state.hyper["sigma"], self._logw

    def extras(self):
        return {"rank_schedule": self.xstep.schedule, "rw_scale_trace": self.scale_trace,
                "fallbacks": self.fallbacks}


def run_ncp(problem, spec: NCPGammaHyperPrior, cfg: RunConfig, spectrum=None, source=None):
    """Noncentred sampler; stored ``x`` values are back-transformed to ``sigma^{-1/2} z``."""
    source = resolve_source(problem, spectrum, source)
    check_rank(cfg, source)
    pilot = lowrank_pilot(problem, source, cfg)
    meta = {"sampler": "ncp", "problem": problem.descriptor(),
            "hyperprior": {"variant": spec.variant, "a_mu": spec.a_mu, "b_mu": spec.b_mu, "a_sigma": spec.a_sigma,
                           "b_sigma": spec.b_sigma, "sigma_update": spec.sigma_update, "rw_scale0": spec.rw_scale0},
            "chains": cfg.chains, "iterations": cfg.iterations, "burn_in": cfg.burn_in, "stride": cfg.stride,
            "seed": cfg.seed}
    samplers = {}

    def factory(c):
        samplers[c] = NCPGibbs(problem, spec, cfg, source, pilot)
        return samplers[c]

    store = run_chains(factory, cfg, problem.n, meta=meta)
    store.meta["final_ranks"] = [rec.rank_schedule[-1][1] for rec in store.chains]
    # distinct proposal scales seen in the sampling phase, one list per chain
    store.meta["rw_scales_after_burn_in"] = [sorted(samplers[c].scales_after_burn_in) for c in range(cfg.chains)]
    store.meta["fallbacks"] = [samplers[c].fallbacks for c in range(cfg.chains)]
    return store
