"""Chain driver shared by all samplers: seeding, recording, timing, threads."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

from ..store import ChainRecord, ChainStore
from .config import RunConfig


class PhaseTimer:
    """Accumulates monotonic-clock nanoseconds per named phase."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.totals: dict[str, int] = {}

    @contextmanager
    def __call__(self, phase: str):
        if not self.enabled:
            yield
            return
        t0 = time.perf_counter_ns()
        try:
            yield
        finally:
            self.totals[phase] = self.totals.get(phase, 0) + time.perf_counter_ns() - t0


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(chain)])


def pilot_precisions(problem, mean_fn, a_mu=0.1, b_mu=0.1, a_sigma=0.1, b_sigma=0.1, sweeps: int = 30):
    """Deterministic starting precisions: fixed point of conditional-mode updates.

    Alternates ``x = E[x | mu, sigma]`` with the Gamma conditional means of
    ``mu`` and ``sigma`` given ``x``. The vague Gamma terms keep the iteration
    finite when the data are weak and ``x`` shrinks towards zero.
    """
    A, L, b = problem.A, problem.L, problem.b
    mu = sigma = 1.0
    for _ in range(sweeps):
        x = mean_fn(mu, sigma)
        r = A.apply(x) - b
        lx = L.apply_L(x)
        mu = (A.rows / 2 + a_mu) / (0.5 * float(r @ r) + b_mu)
        sigma = (A.cols / 2 + a_sigma) / (0.5 * float(lx @ lx) + b_sigma)
    return mu, sigma


def disperse(mu: float, sigma: float, spread: float, rng) -> tuple[float, float]:
    """Lognormal perturbation of a pair of positive values."""
    f = np.exp(spread * rng.standard_normal(2))
    return float(mu * f[0]), float(sigma * f[1])


class ChainSampler:
    """One chain's transition kernel. Subclasses fill in the three hooks."""

    hyper_names = ("mu", "sigma")

    def initial_state(self, rng):
        raise NotImplementedError

    def sweep(self, state, rng, t: int, timer: PhaseTimer):
        raise NotImplementedError

    def report(self, state):
        """``(x, hyper1, hyper2, logw)`` to store for ``state``."""
        raise NotImplementedError

    def extras(self) -> dict:
        return {}


def run_chain(sampler: ChainSampler, chain: int, cfg: RunConfig, n: int) -> ChainRecord:
    ss = chain_seed(cfg.seed, chain)
    rng = np.random.default_rng(ss)
    rec = ChainRecord.allocate(chain, cfg.n_recorded(), n, cfg.store_x == "thinned")
    rec.seed_entropy = [int(cfg.seed), int(chain)]
    timer = PhaseTimer(cfg.timing)
    wall0 = time.perf_counter_ns()
    state = sampler.initial_state(rng)
    row = 0
    for t in range(1, cfg.iterations + 1):
        state = sampler.sweep(state, rng, t, timer)
        sampling = t > cfg.burn_in
        keep = cfg.recorded(t)
        if not (sampling or keep):
            continue
        x, h1, h2, lw = sampler.report(state)
        if sampling:
            rec.x_sum += x
            rec.x_sumsq += x * x
            rec.n_moment += 1
        if keep:
            rec.iters[row] = t
            rec.hyper1[row] = h1
            rec.hyper2[row] = h2
            rec.x_accept[row] = int(state.x_accepted)
            if state.hyper_accepted is not None:
                rec.hyper_accept[row] = int(state.hyper_accepted)
            rec.logw[row] = lw
            if rec.x is not None:
                rec.x[row] = x
            row += 1
    timer.totals["wall"] = time.perf_counter_ns() - wall0
    rec.timings_ns = dict(timer.totals)
    info = sampler.extras()
    rec.rank_schedule = info.get("rank_schedule", [])
    rec.rw_scale_trace = info.get("rw_scale_trace", [])
    return rec


def run_chains(factory, cfg: RunConfig, n: int, hyper_names=("mu", "sigma"), meta=None) -> ChainStore:
    """Run ``cfg.chains`` chains; ``factory(chain)`` returns a fresh :class:`ChainSampler`.

    Each chain owns its generator, seeded from ``(cfg.seed, chain)``, so a
    chain's output does not depend on how many siblings it has.
    """
    t0 = time.perf_counter()

    def one(c):
        return run_chain(factory(c), c, cfg, n)

    if cfg.threads > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(one, range(cfg.chains)))
    else:
        records = [one(c) for c in range(cfg.chains)]
    meta = dict(meta or {})
    meta["wall_seconds"] = time.perf_counter() - t0
    return ChainStore(records, tuple(hyper_names), cfg.burn_in, meta)
